//! Quality metrics for a few degraded versions of one image.
//!
//!     cargo run --example metrics

use respan::datagen::{degrade, generate_scene, SceneConfig};
use respan::metrics::MetricReport;

fn main() -> respan::Result<()> {
    let scene = generate_scene(&SceneConfig::default())?;
    let gt = &scene.hrms;
    let cases = [
        ("identical", gt.clone()),
        ("brightened", gt.map(|v| (v * 1.1).min(1.0))),
        ("blurred x2", degrade(gt, 0.7, 2)),
        ("lrms x4", scene.lrms.clone()),
    ];
    println!(
        "{:<11} {:>8} {:>8} {:>7} {:>8}",
        "case", "SAM", "ERGAS", "SCC", "PSNR"
    );
    for (name, pred) in cases {
        let m = MetricReport::compute(&pred, gt, 4.0)?;
        println!(
            "{name:<11} {:>8.4} {:>8.4} {:>7.4} {:>8.2}",
            m.sam_deg, m.ergas, m.scc, m.psnr_db
        );
    }
    Ok(())
}
