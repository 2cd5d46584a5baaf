//! Training loop: draw `t`, diffuse the residual, predict, step on the loss.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::model::{backward, forward, Denoiser, DenoiserParams, Grads, InputMode, NetConfig};
use super::optim::{AdamW, AdamWConfig};
use crate::chain::{make_training_sample, sample};
use crate::datagen::{load_dataset, Scene};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::{psnr, sam};
use crate::rng::{derive_seed, SeededGaussian};
use crate::schedule::{build_schedule, ScheduleConfig, ScheduleTable};
use crate::wavelet::ConditionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub optim: AdamWConfig,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub blocks: usize,
    pub sci: bool,
    pub input: InputMode,
    /// Samples per optimizer step (gradients averaged).
    pub accum: usize,
    /// Validate every this many epochs (and always after the last one).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            loss: LossConfig::default(),
            optim: AdamWConfig::default(),
            epochs: 200,
            seed: 0,
            hidden: 32,
            blocks: 3,
            sci: true,
            input: InputMode::Latent,
            accum: 1,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn net(&self, bands: usize) -> NetConfig {
        NetConfig {
            hidden: self.hidden,
            blocks: self.blocks,
            sci: self.sci,
            input: self.input,
            ..NetConfig::new(bands)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub sam_deg: f64,
    pub psnr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val: Option<ValidationScore>,
}

pub const LOG_HEADER: &str = "epoch,loss,val_sam_deg,val_psnr_db";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        match self.val {
            Some(v) => format!(
                "{},{:.8},{:.6},{:.6}",
                self.epoch, self.loss, v.sam_deg, v.psnr_db
            ),
            None => format!("{},{:.8},,", self.epoch, self.loss),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub history: Vec<EpochLog>,
}

/// A scene with its condition stack precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scene: Scene,
    pub cond: ConditionSet,
}

pub fn prepare(scenes: &[Scene]) -> Result<Vec<Prepared>> {
    scenes
        .iter()
        .map(|s| {
            Ok(Prepared {
                cond: ConditionSet::build(&s.lrms, &s.pan)?,
                scene: s.clone(),
            })
        })
        .collect()
}

/// Seed of the validation chain for item `index`.
pub fn validation_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed ^ 0x5641_4C49_4441_5445, index as u64)
}

/// Mean SAM / PSNR of sampled reconstructions against HRMS. Items run in
/// parallel with per-item seeds; the reduction is sequential.
pub fn validate(
    params: &DenoiserParams,
    set: &[Prepared],
    tab: &ScheduleTable,
    seed: u64,
) -> Result<ValidationScore> {
    if set.is_empty() {
        return Err(Error::Train("empty validation set".into()));
    }
    let model = Denoiser {
        params: params.clone(),
    };
    let scores: Vec<(f64, f64)> = set
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = SeededGaussian::new(validation_seed(seed, i));
            let out = sample(&p.scene.lrms, &p.cond, &model, tab, &mut rng)?;
            Ok((
                sam(&out.x0_hat, &p.scene.hrms)?,
                psnr(&out.x0_hat, &p.scene.hrms)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(ValidationScore {
        sam_deg: scores.iter().map(|s| s.0).sum::<f64>() / n,
        psnr_db: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}

/// Validation score of the identity (interpolated LRMS) baseline.
pub fn baseline_score(set: &[Prepared]) -> Result<ValidationScore> {
    let n = set.len() as f64;
    let mut s = ValidationScore {
        sam_deg: 0.0,
        psnr_db: 0.0,
    };
    for p in set {
        s.sam_deg += sam(&p.scene.lrms, &p.scene.hrms)? / n;
        s.psnr_db += psnr(&p.scene.lrms, &p.scene.hrms)? / n;
    }
    Ok(s)
}

/// Loss and gradient of one training sample.
pub fn sample_gradient(
    params: &DenoiserParams,
    item: &Prepared,
    tab: &ScheduleTable,
    loss: &LossConfig,
    rng: &mut SeededGaussian,
) -> Result<(f64, Grads)> {
    let s = make_training_sample(&item.scene.hrms, &item.scene.lrms, tab, rng)?;
    let (pred, cache) = forward(params, &s.x_t, &item.cond, s.t, tab.steps())?;
    let target: Vec<f64> = s.e0.data().iter().map(|&v| v as f64).collect();
    let report = loss.eval(&pred, &target, s.e0.bands())?;
    let grads = backward(params, &cache, &report.grad)?;
    Ok((report.value, grads))
}

/// Trains from scratch. `log` receives one CSV row per epoch.
pub fn train(
    train_set: &[Scene],
    val_set: &[Scene],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::Train("empty training set".into()))?;
    if cfg.accum == 0 || cfg.val_every == 0 {
        return Err(Error::config("train", "accum and val_every must be >= 1"));
    }
    let tab = build_schedule(&cfg.schedule)?;
    let train_items = prepare(train_set)?;
    let val_items = prepare(val_set)?;
    let mut params = DenoiserParams::init(cfg.net(first.hrms.bands()), derive_seed(cfg.seed, 0))?;
    let mut opt = AdamW::for_params(cfg.optim, &params);
    let mut rng = SeededGaussian::new(derive_seed(cfg.seed, 1));
    let mut history = Vec::with_capacity(cfg.epochs);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io("<train log>", e))?;
    }
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut acc = Grads::zeros_like(&params);
        let mut pending = 0;
        for (k, &i) in order.iter().enumerate() {
            let (value, g) = sample_gradient(&params, &train_items[i], &tab, &cfg.loss, &mut rng)?;
            if !value.is_finite() || !g.is_finite() {
                return Err(Error::Train(format!(
                    "diverged at epoch {epoch}, sample {k}: loss {value}"
                )));
            }
            total += value;
            acc.add_assign(&g);
            pending += 1;
            if pending == cfg.accum || k + 1 == order.len() {
                acc.scale(1.0 / pending as f64);
                opt.step(&mut params, &acc);
                acc = Grads::zeros_like(&params);
                pending = 0;
            }
        }
        let loss = total / order.len() as f64;
        let val = if !val_items.is_empty() && (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
            Some(validate(&params, &val_items, &tab, cfg.seed)?)
        } else {
            None
        };
        let entry = EpochLog { epoch, loss, val };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", entry.csv_row()).map_err(|e| Error::io("<train log>", e))?;
        }
        history.push(entry);
    }
    if !params.is_finite() {
        return Err(Error::Train("parameters became non-finite".into()));
    }
    Ok(TrainOutcome { params, history })
}

/// Splits a loaded dataset into train / validation: an explicit validation
/// directory wins; otherwise the last `max(1, n / 8)` scenes are held out
/// (a single scene is used for both).
pub fn split_dataset(mut scenes: Vec<Scene>, val: Option<Vec<Scene>>) -> (Vec<Scene>, Vec<Scene>) {
    if let Some(v) = val {
        return (scenes, v);
    }
    if scenes.len() < 2 {
        let v = scenes.clone();
        return (scenes, v);
    }
    let hold = (scenes.len() / 8).max(1);
    let v = scenes.split_off(scenes.len() - hold);
    (scenes, v)
}

#[derive(Debug, Clone)]
pub struct TrainFiles {
    pub data_dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub ckpt: PathBuf,
    pub log: Option<PathBuf>,
}

/// Loads MBIF triples, trains, writes the checkpoint and the CSV log.
pub fn train_from_dir(files: &TrainFiles, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let scenes: Vec<Scene> = load_dataset(&files.data_dir)?
        .into_iter()
        .map(|s| s.scene)
        .collect();
    if scenes.is_empty() {
        return Err(Error::Train(format!(
            "no training triples in {}",
            files.data_dir.display()
        )));
    }
    let val = match &files.val_dir {
        Some(d) => Some(load_dataset(d)?.into_iter().map(|s| s.scene).collect()),
        None => None,
    };
    let (tr, va) = split_dataset(scenes, val);
    let mut buf = Vec::new();
    let outcome = train(&tr, &va, cfg, Some(&mut buf))?;
    checkpoint::save(&outcome.params, &files.ckpt)?;
    if let Some(path) = &files.log {
        write_text(path, &buf)?;
    }
    Ok(outcome)
}

fn write_text(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str() == "-" {
        std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io(path, e))
    } else {
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
