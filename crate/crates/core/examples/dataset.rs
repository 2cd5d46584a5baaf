//! Writes a small synthetic dataset and reads it back.
//!
//!     cargo run --example dataset

use respan::datagen::{generate_dataset, load_dataset, SceneConfig};
use respan::metrics::{psnr, sam};

fn main() -> respan::Result<()> {
    let dir = std::env::temp_dir().join("respan-dataset");
    let cfg = SceneConfig {
        seed: 11,
        ..Default::default()
    };
    let manifest = generate_dataset(&dir, 6, &cfg)?;
    println!("wrote {} scenes to {}", manifest.count, dir.display());
    for s in load_dataset(&dir)? {
        println!(
            "{}: hrms {:?}, LRMS baseline SAM {:.3} deg, PSNR {:.2} dB",
            s.name,
            s.scene.hrms.shape(),
            sam(&s.scene.lrms, &s.scene.hrms)?,
            psnr(&s.scene.lrms, &s.scene.hrms)?
        );
    }
    Ok(())
}
