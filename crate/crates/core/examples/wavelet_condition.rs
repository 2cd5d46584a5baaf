//! Builds the condition stack for one scene and dumps its components as
//! MBIF files.
//!
//!     cargo run --example wavelet_condition

use respan::datagen::{generate_scene, SceneConfig};
use respan::wavelet::db1_decompose;
use respan::ConditionSet;

fn main() -> respan::Result<()> {
    let scene = generate_scene(&SceneConfig::default())?;
    let quad = db1_decompose(&scene.pan)?;
    let back = quad.inverse()?;
    let err = back
        .data()
        .iter()
        .zip(scene.pan.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!(
        "pan {:?}, subbands {:?}, reconstruction error {err:.2e}",
        scene.pan.shape(),
        quad.ll.shape()
    );
    for (name, band) in quad.components() {
        let energy: f64 = band.data().iter().map(|&v| (v as f64).powi(2)).sum();
        println!("  {name}: energy {energy:.4}");
    }
    let cond = ConditionSet::build(&scene.lrms, &scene.pan)?;
    println!(
        "stack: {} channels (1 + C + 4(C + 1) with C = {})",
        cond.channels(),
        scene.lrms.bands()
    );
    let dir = std::env::temp_dir().join("respan-condition");
    let names = cond.dump(&dir)?;
    println!("wrote {} files to {}", names.len(), dir.display());
    Ok(())
}
