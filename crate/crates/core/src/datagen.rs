//! Synthetic reduced-resolution scenes.
//!
//! HRMS is a base level plus Gaussian bumps that share positions across
//! bands but carry band-specific amplitudes. PAN is a convex combination of
//! the HRMS bands. LRMS follows the degrade-then-interpolate protocol:
//! Gaussian blur (truncated at 3 sigma, replicate padding, unit sum), keep
//! the top-left sample of every `scale x scale` block, then nearest-neighbour
//! upsample back to full size.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbif::{read_mbif, write_mbif};
use crate::rng::{derive_seed, SeededGaussian};
use crate::tensor::ImageTensor;
use crate::wavelet::upsample_nearest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub size: usize,
    pub bands: usize,
    pub blobs: usize,
    pub base: f64,
    pub blur_sigma: f64,
    pub scale: usize,
    /// Empty means uniform weights.
    pub pan_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 32,
            bands: 4,
            blobs: 24,
            base: 0.5,
            blur_sigma: 1.0,
            scale: 4,
            pan_weights: Vec::new(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn weights(&self) -> Vec<f64> {
        if self.pan_weights.is_empty() {
            vec![1.0 / self.bands as f64; self.bands]
        } else {
            self.pan_weights.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("datagen", m));
        if self.size == 0 || self.bands == 0 || self.scale == 0 {
            return bad("size, bands and scale must be >= 1".into());
        }
        if !self.size.is_multiple_of(self.scale) {
            return bad(format!(
                "size {} not divisible by scale {}",
                self.size, self.scale
            ));
        }
        if !(self.blur_sigma >= 0.0) {
            return bad(format!("blur sigma {}", self.blur_sigma));
        }
        let w = self.weights();
        if w.len() != self.bands
            || w.iter().any(|&v| !(v >= 0.0))
            || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "pan weights {w:?} not on the simplex of {} bands",
                self.bands
            ));
        }
        Ok(())
    }
}

/// One reduced-resolution triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub hrms: ImageTensor,
    pub lrms: ImageTensor,
    pub pan: ImageTensor,
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicate padding.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> ImageTensor {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (c, h, w) = img.shape();
    let mut tmp = vec![0f64; c * h * w];
    for band in 0..c {
        let src = img.band(band);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    s += kv * src[y * w + xx] as f64;
                }
                tmp[(band * h + y) * w + x] = s;
            }
        }
    }
    let mut out = vec![0f64; c * h * w];
    for band in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    s += kv * tmp[(band * h + yy) * w + x];
                }
                out[(band * h + y) * w + x] = s;
            }
        }
    }
    ImageTensor::from_f64((c, h, w), out)
}

/// Keeps the top-left sample of each `scale x scale` block.
pub fn decimate(img: &ImageTensor, scale: usize) -> ImageTensor {
    let (c, h, w) = img.shape();
    ImageTensor::from_fn(c, h / scale, w / scale, |b, y, x| {
        img.get(b, y * scale, x * scale)
    })
}

/// Blur, decimate and nearest-upsample back to full size.
pub fn degrade(hrms: &ImageTensor, sigma: f64, scale: usize) -> ImageTensor {
    let low = decimate(&gaussian_blur(hrms, sigma), scale);
    upsample_nearest(&low, scale, hrms.height(), hrms.width())
}

pub fn pan_from(hrms: &ImageTensor, weights: &[f64]) -> ImageTensor {
    let n = hrms.pixels();
    ImageTensor::from_f64(
        (1, hrms.height(), hrms.width()),
        (0..n).map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(c, w)| w * hrms.data()[c * n + i] as f64)
                .sum::<f64>()
        }),
    )
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = SeededGaussian::new(cfg.seed);
    let (s, c) = (cfg.size, cfg.bands);
    let mut field = vec![cfg.base; c * s * s];
    for _ in 0..cfg.blobs {
        let cy = rng.uniform_range(0.0, s as f64);
        let cx = rng.uniform_range(0.0, s as f64);
        // Mix of broad and pixel-scale structure so degradation loses detail.
        let sigma = if rng.uniform() < 0.5 {
            rng.uniform_range(0.6, 1.8)
        } else {
            rng.uniform_range(s as f64 / 12.0, s as f64 / 4.0)
        };
        let amp = rng.uniform_range(-0.3, 0.3);
        let tint: Vec<f64> = (0..c)
            .map(|_| 1.0 + 0.6 * rng.uniform_range(-1.0, 1.0))
            .collect();
        let r = (3.0 * sigma).ceil() as isize;
        let (y0, x0) = (cy.floor() as isize, cx.floor() as isize);
        for y in (y0 - r).max(0)..(y0 + r + 1).min(s as isize) {
            for x in (x0 - r).max(0)..(x0 + r + 1).min(s as isize) {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let g = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for (band, t) in tint.iter().enumerate() {
                    field[(band * s + y as usize) * s + x as usize] += g * t;
                }
            }
        }
    }
    let hrms = ImageTensor::from_f64((c, s, s), field.into_iter().map(|v| v.clamp(0.0, 1.0)));
    let pan = pan_from(&hrms, &cfg.weights());
    let lrms = degrade(&hrms, cfg.blur_sigma, cfg.scale);
    Ok(Scene { hrms, lrms, pan })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hrms: String,
    pub lrms: String,
    pub pan: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SceneConfig,
    pub count: usize,
    pub scenes: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Scene `index` of a dataset seeded with `cfg.seed`.
pub fn dataset_scene(cfg: &SceneConfig, index: usize) -> Result<Scene> {
    generate_scene(&SceneConfig {
        seed: derive_seed(cfg.seed, index as u64),
        ..cfg.clone()
    })
}

/// Writes `NNN_hrms.mbif`, `NNN_lrms.mbif`, `NNN_pan.mbif` per scene plus
/// `manifest.json`. Scenes are generated in parallel; output does not
/// depend on the thread count.
pub fn generate_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    cfg: &SceneConfig,
) -> Result<Manifest> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scenes: Vec<ManifestEntry> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let scene = dataset_scene(cfg, i)?;
            let entry = ManifestEntry {
                hrms: format!("{i:03}_hrms.mbif"),
                lrms: format!("{i:03}_lrms.mbif"),
                pan: format!("{i:03}_pan.mbif"),
                seed: derive_seed(cfg.seed, i as u64),
            };
            write_mbif(&scene.hrms, dir.join(&entry.hrms))?;
            write_mbif(&scene.lrms, dir.join(&entry.lrms))?;
            write_mbif(&scene.pan, dir.join(&entry.pan))?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        count,
        scenes,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Named triple loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub name: String,
    pub scene: Scene,
}

fn scene_paths(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf, PathBuf)>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "manifest",
            offset: e.column() as u64,
            msg: e.to_string(),
        })?;
        return Ok(m
            .scenes
            .into_iter()
            .map(|e| {
                let name = e.hrms.trim_end_matches("_hrms.mbif").to_string();
                (name, dir.join(e.hrms), dir.join(e.lrms), dir.join(e.pan))
            })
            .collect());
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_hrms.mbif"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    Ok(names
        .into_iter()
        .map(|n| {
            let p = |k: &str| dir.join(format!("{n}_{k}.mbif"));
            (n.clone(), p("hrms"), p("lrms"), p("pan"))
        })
        .collect())
}

/// Loads every triple in `dir` (manifest order when present, else sorted
/// by prefix).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<LoadedScene>> {
    let dir = dir.as_ref();
    scene_paths(dir)?
        .into_iter()
        .map(|(name, h, l, p)| {
            Ok(LoadedScene {
                name,
                scene: Scene {
                    hrms: read_mbif(h)?,
                    lrms: read_mbif(l)?,
                    pan: read_mbif(p)?,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sam;

    #[test]
    fn constants_survive_degradation() {
        let cfg = SceneConfig {
            blobs: 0,
            base: 0.5,
            ..Default::default()
        };
        let s = generate_scene(&cfg).unwrap();
        for t in [&s.hrms, &s.lrms, &s.pan] {
            assert!(t.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        }
    }

    #[test]
    fn blur_kernel_sums_to_one() {
        for sigma in [0.5, 1.0, 2.3] {
            assert!((gaussian_kernel(sigma).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degraded_scene_differs_spectrally() {
        for seed in 0..100 {
            let s = generate_scene(&SceneConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            assert!(sam(&s.lrms, &s.hrms).unwrap() > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_scene(&SceneConfig {
            size: 30,
            ..Default::default()
        })
        .is_err());
        assert!(generate_scene(&SceneConfig {
            pan_weights: vec![0.5, 0.5, 0.5, 0.5],
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn dataset_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            size: 8,
            ..Default::default()
        };
        let m = generate_dataset(dir.path(), 3, &cfg).unwrap();
        assert_eq!(m.scenes.len(), 3);
        let mbif = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "mbif")
            })
            .count();
        assert_eq!(mbif, 9);
        assert!(dir.path().join(MANIFEST_NAME).exists());
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[1].name, "001");

        let again = tempfile::tempdir().unwrap();
        generate_dataset(again.path(), 3, &cfg).unwrap();
        for name in ["000_hrms.mbif", "002_pan.mbif", MANIFEST_NAME] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn empty_dataset_has_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 0, &SceneConfig::default()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }
}
