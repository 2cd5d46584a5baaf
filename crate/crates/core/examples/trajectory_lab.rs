//! Trains the 2D residual predictor for each pairing, rolls 50 reverse
//! chains and writes CSV + SVG reports.
//!
//!     cargo run --release --example trajectory_lab

use respan::chain::NoiseSource;
use respan::trajectory::{
    render_svg, roll_trajectories, straightness_report, train_toy, Pairing, ToyTask, ToyTrainConfig,
};
use respan::{build_schedule, SeededGaussian};

fn main() -> respan::Result<()> {
    let cfg = ToyTrainConfig::default();
    let tab = build_schedule(&cfg.schedule)?;
    let dir = std::env::temp_dir().join("respan-trajectories");
    std::fs::create_dir_all(&dir).map_err(|e| respan::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    for pairing in [Pairing::Identity, Pairing::Shift, Pairing::Swirl] {
        let task = ToyTask::new(pairing, 0);
        let fit = train_toy(&task, &tab, &cfg)?;
        let (first, last) = fit.initial_final(50);
        let mut noise = |s: u64| -> Box<dyn NoiseSource> { Box::new(SeededGaussian::new(s)) };
        let trajs = roll_trajectories(&fit.model, &task, 50, &tab, 1, &mut noise)?;
        let rep = straightness_report(&trajs)?;
        let stem = dir.join(format!("{pairing:?}").to_lowercase());
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).expect("in-memory write");
        std::fs::write(stem.with_extension("csv"), csv).expect("write csv");
        std::fs::write(
            stem.with_extension("svg"),
            render_svg(&trajs, &format!("{pairing:?}")),
        )
        .expect("write svg");
        println!(
            "{pairing:?}: loss {first:.4} -> {last:.5}, mean path/chord {:.4}, {} crossings",
            rep.mean_ratio(),
            rep.crossings
        );
    }
    println!("reports in {}", dir.display());
    Ok(())
}
