//! Command-line front end. [`run`] parses, prints the resolved
//! configuration to stderr, dispatches and maps the outcome to an exit code:
//! 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::chain::{sample, NoiseSource, ZeroNoise};
use crate::datagen::{generate_dataset, load_dataset, SceneConfig};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossKind, PenaltyScope, DEFAULT_GAMMA};
use crate::mbif::{read_mbif, write_mbif};
use crate::metrics::{ergas, psnr, sam_with, scc, write_report_csv, MetricReport};
use crate::nn::{
    checkpoint, train_from_dir, AdamWConfig, Denoiser, InputMode, TrainConfig, TrainFiles,
};
use crate::rng::{derive_seed, SeededGaussian};
use crate::schedule::{build_schedule, ScheduleConfig};
use crate::tensor::ImageTensor;
use crate::trajectory::{
    render_svg, roll_trajectories, straightness_report, train_toy, Pairing, ToyMlp, ToyOracle,
    ToyPredictor, ToyTask, ToyTrainConfig,
};
use crate::verify;
use crate::wavelet::ConditionSet;

#[derive(Debug, Parser)]
#[command(
    name = "respan",
    version,
    about = "Residual diffusion for multispectral image fusion"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for per-image parallelism (0 = all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true, env = "RESPAN_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic HRMS/LRMS/PAN dataset.
    GenData(GenDataArgs),
    /// Train the denoiser and write an RPDC checkpoint.
    Train(TrainArgs),
    /// Fuse LRMS + PAN with a trained checkpoint.
    Sample(SampleArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Print or save the noise schedule.
    Schedule(ScheduleArgs),
    /// 2D transport toy: train, roll, and report straightness.
    Trajectory(TrajectoryArgs),
    /// Run the property suite and print a PASS/FAIL table.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChainArgs {
    /// Number of diffusion steps.
    #[arg(long = "T", alias = "steps", default_value_t = 15)]
    pub steps: usize,
    /// Cosine schedule offset.
    #[arg(long, default_value_t = 8e-3)]
    pub p: f64,
    /// Noise scale.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
}

impl ChainArgs {
    fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps,
            p: self.p,
            kappa: self.kappa,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 24)]
    pub blobs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Validation triples; defaults to holding out the last eighth of the data.
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value = "res")]
    #[serde(serialize_with = "display")]
    pub loss: LossKind,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Take the range penalty's extremes per band instead of globally.
    #[arg(long)]
    pub per_band_penalty: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Network input: latent state (xt) or residual state (et).
    #[arg(long, default_value = "xt")]
    #[serde(serialize_with = "input_name")]
    pub input: InputMode,
    /// Disable shallow condition injection (condition enters the first block).
    #[arg(long)]
    pub no_sci: bool,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1)]
    pub accum: usize,
    #[arg(long, default_value_t = 1)]
    pub val_every: usize,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Per-epoch CSV log ("-" = stdout).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// An LRMS file, or a dataset directory to fuse every triple in it.
    #[arg(long)]
    pub lrms: PathBuf,
    /// PAN file; omitted in directory mode.
    #[arg(long)]
    pub pan: Option<PathBuf>,
    /// Output file, or output directory in directory mode (`<name>_pred.mbif`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction file, or directory of `<name>_pred.mbif`.
    #[arg(long, required_unless_present = "dump_cond")]
    pub pred: Option<PathBuf>,
    /// Ground-truth file, or dataset directory.
    #[arg(long, required_unless_present = "dump_cond")]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub csv: PathBuf,
    /// Resolution ratio used by ERGAS.
    #[arg(long, default_value_t = 4.0)]
    pub ratio: f64,
    /// Fail on zero-norm spectra instead of skipping them in SAM.
    #[arg(long)]
    pub strict: bool,
    /// Write the wavelet condition components of --lrms/--pan to this directory.
    #[arg(long, requires_all = ["lrms", "pan"])]
    pub dump_cond: Option<PathBuf>,
    #[arg(long)]
    pub lrms: Option<PathBuf>,
    #[arg(long)]
    pub pan: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value = "-")]
    pub csv: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrajectoryArgs {
    #[arg(long, default_value = "swirl")]
    #[serde(serialize_with = "debug_name")]
    pub pairing: Pairing,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long = "T", alias = "steps", default_value_t = 15)]
    pub steps: usize,
    #[arg(long, default_value_t = 8e-3)]
    pub p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    /// Use the exact residual instead of a trained network.
    #[arg(long)]
    pub oracle: bool,
    /// Roll the posterior mean path (no sampling noise).
    #[arg(long)]
    pub zero_noise: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<prefix>.csv` and `<prefix>.svg`.
    #[arg(long, default_value = "traj")]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn input_name<S: serde::Serializer>(v: &InputMode, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match v {
        InputMode::Latent => "xt",
        InputMode::Residual => "et",
    })
}

fn debug_name<T: std::fmt::Debug, S: serde::Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:?}").to_lowercase())
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cli: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn announce(command: &str, threads: usize, args: &impl Serialize, extra: serde_json::Value) {
    let mut v = json!({ "command": command, "threads": threads, "args": args });
    if !extra.is_null() {
        v["resolved"] = extra;
    }
    eprintln!("config: {v}");
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let threads = rayon::current_num_threads();
    match &cli.command {
        Command::GenData(a) => {
            let cfg = SceneConfig {
                size: a.size,
                bands: a.bands,
                blobs: a.blobs,
                blur_sigma: a.blur_sigma,
                scale: a.scale,
                seed: a.seed,
                ..Default::default()
            };
            announce("gen-data", threads, a, json!({ "scene": cfg }));
            let m = generate_dataset(&a.out, a.count, &cfg)?;
            eprintln!("wrote {} scenes to {}", m.count, a.out.display());
        }
        Command::Train(a) => {
            let cfg = TrainConfig {
                schedule: a.chain.config(),
                loss: LossConfig {
                    kind: a.loss,
                    gamma: a.gamma,
                    scope: if a.per_band_penalty {
                        PenaltyScope::PerBand
                    } else {
                        PenaltyScope::Global
                    },
                },
                optim: AdamWConfig {
                    lr: a.lr,
                    weight_decay: a.weight_decay,
                    ..Default::default()
                },
                epochs: a.epochs,
                seed: a.seed,
                hidden: a.hidden,
                blocks: a.blocks,
                sci: !a.no_sci,
                input: a.input,
                accum: a.accum,
                val_every: a.val_every,
            };
            announce("train", threads, a, json!({ "train": cfg }));
            let files = TrainFiles {
                data_dir: a.data_dir.clone(),
                val_dir: a.val_dir.clone(),
                ckpt: a.ckpt.clone(),
                log: a.log.clone(),
            };
            let out = train_from_dir(&files, &cfg)?;
            if let Some(last) = out.history.last() {
                eprintln!("final epoch {}: loss {:.6}", last.epoch, last.loss);
                if let Some(v) = last.val {
                    eprintln!(
                        "validation: SAM {:.4} deg, PSNR {:.3} dB",
                        v.sam_deg, v.psnr_db
                    );
                }
            }
            eprintln!("checkpoint: {}", a.ckpt.display());
        }
        Command::Sample(a) => {
            announce(
                "sample",
                threads,
                a,
                json!({ "schedule": a.chain.config() }),
            );
            cmd_sample(a)?;
        }
        Command::Eval(a) => {
            announce("eval", threads, a, serde_json::Value::Null);
            cmd_eval(a)?;
        }
        Command::Schedule(a) => {
            let cfg = a.chain.config();
            announce("schedule", threads, a, json!({ "schedule": cfg }));
            let tab = build_schedule(&cfg)?;
            let mut buf = Vec::new();
            tab.write_csv(&mut buf).map_err(|e| Error::io("<csv>", e))?;
            write_sink(&a.csv, &buf)?;
        }
        Command::Trajectory(a) => {
            announce("trajectory", threads, a, serde_json::Value::Null);
            cmd_trajectory(a)?;
        }
        Command::Verify(a) => {
            announce("verify", threads, a, serde_json::Value::Null);
            let checks = verify::run_all(a.seed)?;
            let mut buf = Vec::new();
            verify::write_table(&checks, &mut buf).map_err(|e| Error::io("<stdout>", e))?;
            write_sink(Path::new("-"), &buf)?;
            if checks.iter().any(|c| !c.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn write_sink(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str() == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io("<stdout>", e))
    } else {
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn fuse(
    model: &Denoiser,
    lrms: &ImageTensor,
    pan: &ImageTensor,
    a: &SampleArgs,
    seed: u64,
) -> Result<ImageTensor> {
    let tab = build_schedule(&a.chain.config())?;
    if lrms.bands() != model.params.config().bands {
        return Err(Error::Model(format!(
            "checkpoint expects {} bands, LRMS has {}",
            model.params.config().bands,
            lrms.bands()
        )));
    }
    let cond = ConditionSet::build(lrms, pan)?;
    let mut rng = SeededGaussian::new(seed);
    Ok(sample(lrms, &cond, model, &tab, &mut rng)?.x0_hat)
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let model = Denoiser {
        params: checkpoint::load(&a.ckpt)?,
    };
    if a.lrms.is_dir() {
        let scenes = load_dataset(&a.lrms)?;
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let x = fuse(
                    &model,
                    &s.scene.lrms,
                    &s.scene.pan,
                    a,
                    derive_seed(a.seed, i as u64),
                )?;
                write_mbif(&x, a.out.join(format!("{}_pred.mbif", s.name)))
            })
            .collect::<Result<Vec<()>>>()?;
        eprintln!("fused {} scenes into {}", scenes.len(), a.out.display());
    } else {
        let pan_path = a
            .pan
            .as_ref()
            .ok_or_else(|| Error::config("cli", "--pan is required when --lrms is a file"))?;
        let x = fuse(
            &model,
            &read_mbif(&a.lrms)?,
            &read_mbif(pan_path)?,
            a,
            a.seed,
        )?;
        write_mbif(&x, &a.out)?;
        eprintln!("wrote {}", a.out.display());
    }
    Ok(())
}

fn score(pred: &ImageTensor, gt: &ImageTensor, a: &EvalArgs) -> Result<MetricReport> {
    Ok(MetricReport {
        sam_deg: sam_with(pred, gt, a.strict)?,
        ergas: ergas(pred, gt, a.ratio)?,
        scc: scc(pred, gt)?,
        psnr_db: psnr(pred, gt)?,
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if let Some(dir) = &a.dump_cond {
        let (l, p) = (a.lrms.as_ref().unwrap(), a.pan.as_ref().unwrap());
        let names = ConditionSet::build(&read_mbif(l)?, &read_mbif(p)?)?.dump(dir)?;
        eprintln!(
            "wrote {} condition components to {}",
            names.len(),
            dir.display()
        );
    }
    let (Some(pred), Some(gt)) = (&a.pred, &a.gt) else {
        return Ok(());
    };
    let rows: Vec<(String, MetricReport)> = if gt.is_dir() {
        let scenes = load_dataset(gt)?;
        scenes
            .par_iter()
            .map(|s| {
                let p = read_mbif(pred.join(format!("{}_pred.mbif", s.name)))?;
                Ok((s.name.clone(), score(&p, &s.scene.hrms, a)?))
            })
            .collect::<Result<_>>()?
    } else {
        let name = gt
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        vec![(name, score(&read_mbif(pred)?, &read_mbif(gt)?, a)?)]
    };
    let mut buf = Vec::new();
    write_report_csv(&rows, &mut buf).map_err(|e| Error::io("<csv>", e))?;
    write_sink(&a.csv, &buf)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_trajectory(a: &TrajectoryArgs) -> Result<()> {
    let sched = ScheduleConfig {
        steps: a.steps,
        p: a.p,
        kappa: a.kappa,
    };
    let tab = build_schedule(&sched)?;
    let task = ToyTask::new(a.pairing, a.seed);
    let model: Box<dyn ToyPredictor> = if a.oracle {
        Box::new(ToyOracle(a.pairing))
    } else {
        let cfg = ToyTrainConfig {
            schedule: sched,
            iters: a.iters,
            optim: AdamWConfig {
                lr: a.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train_toy(&task, &tab, &cfg)?;
        let (first, last) = out.initial_final(50);
        eprintln!("toy training loss: {first:.6} -> {last:.6}");
        Box::<ToyMlp>::new(out.model)
    };
    let zero = a.zero_noise;
    let mut noise = move |s: u64| -> Box<dyn NoiseSource> {
        if zero {
            Box::new(ZeroNoise)
        } else {
            Box::new(SeededGaussian::new(s))
        }
    };
    let trajs = roll_trajectories(
        model.as_ref(),
        &task,
        a.n,
        &tab,
        derive_seed(a.seed, 99),
        &mut noise,
    )?;
    let rep = straightness_report(&trajs)?;
    if let Some(parent) = a.out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let csv = with_ext(&a.out_prefix, ".csv");
    let svg = with_ext(&a.out_prefix, ".svg");
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).map_err(|e| Error::io(&csv, e))?;
    fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))?;
    let title = format!(
        "{:?} pairing, {} trajectories, mean ratio {:.4}, {} crossings",
        a.pairing,
        trajs.len(),
        rep.mean_ratio(),
        rep.crossings
    );
    fs::write(&svg, render_svg(&trajs, &title)).map_err(|e| Error::io(&svg, e))?;
    println!("mean_ratio,{:.6}", rep.mean_ratio());
    println!("crossings,{}", rep.crossings);
    eprintln!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
