//! Reverse sampling with a predictor that knows the true residual: the
//! chain lands exactly on HRMS, because the last posterior is deterministic.
//!
//!     cargo run --example oracle_sampling

use respan::chain::sample_traced;
use respan::datagen::{generate_scene, SceneConfig};
use respan::metrics::{psnr, sam};
use respan::nn::oracle_predictor;
use respan::{build_schedule, ConditionSet, ScheduleConfig, SeededGaussian};

fn main() -> respan::Result<()> {
    let scene = generate_scene(&SceneConfig {
        seed: 3,
        ..Default::default()
    })?;
    let cond = ConditionSet::build(&scene.lrms, &scene.pan)?;
    let tab = build_schedule(&ScheduleConfig::default())?;
    let oracle = oracle_predictor(&scene.hrms, &scene.lrms)?;
    let mut rng = SeededGaussian::new(0);
    let out = sample_traced(&scene.lrms, &cond, &oracle, &tab, &mut rng, |s| {
        let dist = s
            .x_t
            .sub(&scene.hrms)
            .map(|e| e.data().iter().map(|v| v.abs()).fold(0.0f32, f32::max));
        println!(
            "t = {:>2}  max |x_t - hrms| = {:.6}",
            s.t,
            dist.unwrap_or(f32::NAN)
        );
    })?;
    println!("SAM  {:.3e} deg", sam(&out.x0_hat, &scene.hrms)?);
    println!("PSNR {:.1} dB", psnr(&out.x0_hat, &scene.hrms)?);
    Ok(())
}
