//! Trains a small denoiser in memory, round-trips it through a checkpoint,
//! and fuses a held-out scene.
//!
//!     cargo run --release --example train_denoiser [epochs]

use respan::chain::sample;
use respan::datagen::{dataset_scene, SceneConfig};
use respan::metrics::MetricReport;
use respan::nn::{checkpoint, train, Denoiser, TrainConfig};
use respan::{build_schedule, ConditionSet, SeededGaussian};

fn main() -> respan::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let cfg = SceneConfig::default();
    let scenes: Vec<_> = (0..18)
        .map(|i| dataset_scene(&cfg, i))
        .collect::<Result<_, _>>()?;
    let (train_set, val_set) = scenes.split_at(16);
    let tc = TrainConfig {
        epochs,
        val_every: 5,
        ..Default::default()
    };
    let mut log = std::io::stdout();
    let out = train(train_set, val_set, &tc, Some(&mut log))?;

    let path = std::env::temp_dir().join("respan-example.rpdc");
    checkpoint::save(&out.params, &path)?;
    let model = Denoiser {
        params: checkpoint::load(&path)?,
    };

    let tab = build_schedule(&tc.schedule)?;
    let scene = &val_set[0];
    let cond = ConditionSet::build(&scene.lrms, &scene.pan)?;
    let fused = sample(
        &scene.lrms,
        &cond,
        &model,
        &tab,
        &mut SeededGaussian::new(1),
    )?;
    let before = MetricReport::compute(&scene.lrms, &scene.hrms, 4.0)?;
    let after = MetricReport::compute(&fused.x0_hat, &scene.hrms, 4.0)?;
    println!("LRMS:  {before:?}");
    println!("fused: {after:?}");
    Ok(())
}
