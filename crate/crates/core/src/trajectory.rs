//! 2D transport lab.
//!
//! Source points `s ~ pi0` (a seeded Gaussian mixture) are paired with
//! targets `g(s)` by a fixed map, so the residual `e0 = g(s) - s` is a
//! function of the source rather than a random coupling. A small MLP learns
//! `e0` from the noisy state `s + e_t` and `t / T`; the reverse chain then
//! moves each point from `s + e_T` to `s + e_0`, and the recorded path is
//! compared with its chord.
//!
//! The rollout uses the same posterior coefficients as the image sampler.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chain::{forward_marginal_scalar, posterior_coeffs, NoiseSource};
use crate::error::{Error, Result};
use crate::nn::optim::{AdamW, AdamWConfig};
use crate::rng::{derive_seed, SeededGaussian};
use crate::schedule::{ScheduleConfig, ScheduleTable};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    Identity,
    /// `g(x) = x + (1, 1)`.
    Shift,
    /// Rotation about the origin by `0.5 |x|` radians.
    Swirl,
}

impl std::str::FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(Pairing::Identity),
            "shift" => Ok(Pairing::Shift),
            "swirl" => Ok(Pairing::Swirl),
            other => Err(format!(
                "unknown pairing {other:?} (expected identity, shift, swirl)"
            )),
        }
    }
}

impl Pairing {
    pub fn apply(self, p: Point) -> Point {
        match self {
            Pairing::Identity => p,
            Pairing::Shift => [p[0] + 1.0, p[1] + 1.0],
            Pairing::Swirl => {
                let a = 0.5 * (p[0] * p[0] + p[1] * p[1]).sqrt();
                let (s, c) = a.sin_cos();
                [c * p[0] - s * p[1], s * p[0] + c * p[1]]
            }
        }
    }

    pub fn residual(self, p: Point) -> Point {
        let q = self.apply(p);
        [q[0] - p[0], q[1] - p[1]]
    }
}

/// Four-mode mixture at radius 2 on the axes, isotropic std 0.3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub modes: Vec<Point>,
    pub mode_std: f64,
    pub pairing: Pairing,
    pub samples: usize,
    pub seed: u64,
}

impl ToyTask {
    pub fn new(pairing: Pairing, seed: u64) -> Self {
        Self {
            modes: vec![[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]],
            mode_std: 0.3,
            pairing,
            samples: 4096,
            seed,
        }
    }

    pub fn draw_source(&self, rng: &mut SeededGaussian) -> Point {
        let m = self.modes[rng.below(self.modes.len() as u64) as usize];
        [
            m[0] + self.mode_std * rng.normal(),
            m[1] + self.mode_std * rng.normal(),
        ]
    }
}

pub trait ToyPredictor {
    /// Estimate of `e0` at `state` and step `t`. `source` is the chain's
    /// starting point; learned models ignore it.
    fn predict(&self, state: Point, t: usize, steps: usize, source: Point) -> Point;
}

/// Returns the true residual of the source.
#[derive(Debug, Clone, Copy)]
pub struct ToyOracle(pub Pairing);

impl ToyPredictor for ToyOracle {
    fn predict(&self, _: Point, _: usize, _: usize, source: Point) -> Point {
        self.0.residual(source)
    }
}

/// `3 -> hidden -> hidden -> 2` tanh MLP over `(x, y, t / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMlp {
    hidden: usize,
    /// w1, b1, w2, b2, w3, b3.
    params: Vec<Vec<f64>>,
}

struct MlpTrace {
    input: [f64; 3],
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl ToyMlp {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = SeededGaussian::new(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-b, b))
                .collect::<Vec<_>>()
        };
        let params = vec![
            layer(3, hidden),
            vec![0.0; hidden],
            layer(hidden, hidden),
            vec![0.0; hidden],
            layer(hidden, 2),
            vec![0.0; 2],
        ];
        Self { hidden, params }
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    fn run(&self, input: [f64; 3]) -> (Point, MlpTrace) {
        let h = self.hidden;
        let p = &self.params;
        let h1: Vec<f64> = (0..h)
            .map(|o| (p[1][o] + (0..3).map(|i| p[0][o * 3 + i] * input[i]).sum::<f64>()).tanh())
            .collect();
        let h2: Vec<f64> = (0..h)
            .map(|o| (p[3][o] + (0..h).map(|i| p[2][o * h + i] * h1[i]).sum::<f64>()).tanh())
            .collect();
        let out = [0, 1].map(|o| p[5][o] + (0..h).map(|i| p[4][o * h + i] * h2[i]).sum::<f64>());
        (out, MlpTrace { input, h1, h2 })
    }

    /// Accumulates gradients of `0.5 * |out - target|^2 * weight`.
    fn accumulate(&self, tr: &MlpTrace, d_out: Point, grads: &mut [Vec<f64>]) {
        let h = self.hidden;
        let p = &self.params;
        let mut d_h2 = vec![0.0; h];
        for o in 0..2 {
            grads[5][o] += d_out[o];
            for i in 0..h {
                grads[4][o * h + i] += d_out[o] * tr.h2[i];
                d_h2[i] += d_out[o] * p[4][o * h + i];
            }
        }
        let mut d_h1 = vec![0.0; h];
        for o in 0..h {
            let dz = d_h2[o] * (1.0 - tr.h2[o] * tr.h2[o]);
            grads[3][o] += dz;
            for i in 0..h {
                grads[2][o * h + i] += dz * tr.h1[i];
                d_h1[i] += dz * p[2][o * h + i];
            }
        }
        for o in 0..h {
            let dz = d_h1[o] * (1.0 - tr.h1[o] * tr.h1[o]);
            grads[1][o] += dz;
            for i in 0..3 {
                grads[0][o * 3 + i] += dz * tr.input[i];
            }
        }
    }
}

impl ToyPredictor for ToyMlp {
    fn predict(&self, state: Point, t: usize, steps: usize, _: Point) -> Point {
        self.run([state[0], state[1], t as f64 / steps as f64]).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub schedule: ScheduleConfig,
    pub hidden: usize,
    pub iters: usize,
    pub batch: usize,
    pub optim: AdamWConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig {
                kappa: 0.1,
                ..Default::default()
            },
            hidden: 64,
            iters: 3000,
            batch: 64,
            optim: AdamWConfig {
                lr: 2e-3,
                weight_decay: 0.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTrainOutcome {
    pub model: ToyMlp,
    /// Mean squared residual error per iteration.
    pub losses: Vec<f64>,
}

impl ToyTrainOutcome {
    /// Mean of the first / last `k` iteration losses.
    pub fn initial_final(&self, k: usize) -> (f64, f64) {
        let k = k.min(self.losses.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (
            mean(&self.losses[..k]),
            mean(&self.losses[self.losses.len() - k..]),
        )
    }
}

/// Regresses `e0` on marginal-corrupted states with mean squared error.
pub fn train_toy(
    task: &ToyTask,
    tab: &ScheduleTable,
    cfg: &ToyTrainConfig,
) -> Result<ToyTrainOutcome> {
    if task.samples < 100 {
        return Err(Error::config(
            "trajectory",
            format!("need >= 100 samples, got {}", task.samples),
        ));
    }
    let mut model = ToyMlp::new(cfg.hidden, derive_seed(task.seed, 0));
    let mut rng = SeededGaussian::new(derive_seed(task.seed, 1));
    let sources: Vec<Point> = (0..task.samples)
        .map(|_| task.draw_source(&mut rng))
        .collect();
    let mut opt = AdamW::new(cfg.optim, model.params.iter().map(Vec::len));
    let steps = tab.steps();
    let mut losses = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let s = sources[rng.below(sources.len() as u64) as usize];
            let e0 = task.pairing.residual(s);
            let t = 1 + rng.below(steps as u64) as usize;
            let e_t = [
                forward_marginal_scalar(e0[0], t, tab, &mut rng)?,
                forward_marginal_scalar(e0[1], t, tab, &mut rng)?,
            ];
            let (out, tr) = model.run([s[0] + e_t[0], s[1] + e_t[1], t as f64 / steps as f64]);
            let d = [out[0] - e0[0], out[1] - e0[1]];
            total += d[0] * d[0] + d[1] * d[1];
            let k = 2.0 / cfg.batch as f64;
            model.accumulate(&tr, [k * d[0], k * d[1]], &mut grads);
        }
        let loss = total / cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Train(format!(
                "toy regression diverged at iteration {}",
                losses.len()
            )));
        }
        losses.push(loss);
        let g: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut p: Vec<&mut [f64]> = model.params.iter_mut().map(Vec::as_mut_slice).collect();
        opt.update_slices(&mut p, &g, &[]);
    }
    Ok(ToyTrainOutcome { model, losses })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub source: Point,
    pub target: Point,
    /// `T + 1` states from `t = T` down to `t = 0`.
    pub points: Vec<Point>,
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Trajectory {
    pub fn chord(&self) -> f64 {
        dist(self.points[0], *self.points.last().unwrap())
    }

    pub fn path(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// `path / chord`; 1 for a degenerate zero-length trajectory and
    /// infinite when only the chord vanishes.
    pub fn ratio(&self) -> f64 {
        let (c, p) = (self.chord(), self.path());
        if c > 0.0 {
            p / c
        } else if p == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }
}

/// Runs the reverse chain for `n` fresh sources. `noise` drives both the
/// start `e_T ~ N(0, kappa^2)` and every posterior draw; pass
/// [`crate::chain::ZeroNoise`] for the mean path.
pub fn roll_trajectories(
    predictor: &dyn ToyPredictor,
    task: &ToyTask,
    n: usize,
    tab: &ScheduleTable,
    seed: u64,
    noise: &mut dyn FnMut(u64) -> Box<dyn NoiseSource>,
) -> Result<Vec<Trajectory>> {
    let steps = tab.steps();
    let start_std = tab.kappa() * tab.alpha_bar(steps).sqrt();
    (0..n)
        .map(|i| {
            let mut src_rng = SeededGaussian::new(derive_seed(seed, 2 * i as u64));
            let mut ns = noise(derive_seed(seed, 2 * i as u64 + 1));
            let source = task.draw_source(&mut src_rng);
            let mut e = [start_std * ns.normal(), start_std * ns.normal()];
            let mut points = Vec::with_capacity(steps + 1);
            points.push([source[0] + e[0], source[1] + e[1]]);
            for t in (1..=steps).rev() {
                let state = [source[0] + e[0], source[1] + e[1]];
                let e0_hat = predictor.predict(state, t, steps, source);
                let k = posterior_coeffs(tab, t)?;
                for d in 0..2 {
                    let z = if k.std > 0.0 {
                        k.std * ns.normal()
                    } else {
                        0.0
                    };
                    e[d] = k.mean(e[d], e0_hat[d]) + z;
                }
                points.push([source[0] + e[0], source[1] + e[1]]);
            }
            Ok(Trajectory {
                source,
                target: task.pairing.apply(source),
                points,
            })
        })
        .collect()
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Whether segments `p0->p1` and `q0->q1` meet. Segments are half-open
/// (`[start, end)`) unless `*_closed`, so a crossing at a shared polyline
/// vertex is counted once. Parallel and collinear pairs never count.
pub fn segments_cross(
    p0: Point,
    p1: Point,
    p_closed: bool,
    q0: Point,
    q1: Point,
    q_closed: bool,
) -> bool {
    let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d2 = [q1[0] - q0[0], q1[1] - q0[1]];
    let denom = cross(d1, d2);
    if denom == 0.0 {
        return false;
    }
    let w = [q0[0] - p0[0], q0[1] - p0[1]];
    let s = cross(w, d2) / denom;
    let u = cross(w, d1) / denom;
    let inside = |v: f64, closed: bool| v >= 0.0 && if closed { v <= 1.0 } else { v < 1.0 };
    inside(s, p_closed) && inside(u, q_closed)
}

/// Number of segment crossings between two polylines.
pub fn polyline_crossings(a: &[Point], b: &[Point]) -> usize {
    let (na, nb) = (a.len().saturating_sub(1), b.len().saturating_sub(1));
    let mut count = 0;
    for i in 0..na {
        for j in 0..nb {
            if segments_cross(a[i], a[i + 1], i + 1 == na, b[j], b[j + 1], j + 1 == nb) {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct StraightnessRow {
    pub id: usize,
    pub chord: f64,
    pub path: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StraightnessReport {
    pub rows: Vec<StraightnessRow>,
    /// Crossings summed over all trajectory pairs.
    pub crossings: usize,
}

impl StraightnessReport {
    pub fn mean_ratio(&self) -> f64 {
        let finite: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.ratio)
            .filter(|r| r.is_finite())
            .collect();
        finite.iter().sum::<f64>() / finite.len().max(1) as f64
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "traj_id,chord,path,ratio")?;
        for r in &self.rows {
            writeln!(out, "{},{:.9},{:.9},{:.9}", r.id, r.chord, r.path, r.ratio)?;
        }
        Ok(())
    }
}

pub fn straightness_report(trajs: &[Trajectory]) -> Result<StraightnessReport> {
    if trajs.is_empty() {
        return Err(Error::config("trajectory", "no trajectories"));
    }
    let rows = trajs
        .iter()
        .enumerate()
        .map(|(id, t)| StraightnessRow {
            id,
            chord: t.chord(),
            path: t.path(),
            ratio: t.ratio(),
        })
        .collect();
    let mut crossings = 0;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            crossings += polyline_crossings(&trajs[i].points, &trajs[j].points);
        }
    }
    Ok(StraightnessReport { rows, crossings })
}

/// Self-contained SVG: sources (blue), paired targets (red), generated end
/// points (green) and the trajectories as grey polylines.
pub fn render_svg(trajs: &[Trajectory], title: &str) -> String {
    let all = trajs
        .iter()
        .flat_map(|t| t.points.iter().copied().chain([t.source, t.target]));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if !lo[0].is_finite() {
        lo = [-1.0, -1.0];
        hi = [1.0, 1.0];
    }
    let size = 600.0;
    let pad = 30.0;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let k = (size - 2.0 * pad) / span;
    let px = |p: Point| (pad + (p[0] - lo[0]) * k, size - pad - (p[1] - lo[1]) * k);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<title>{}</title>"#,
        title.replace('<', "&lt;").replace('&', "&amp;")
    );
    for t in trajs {
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#555" stroke-opacity="0.6" stroke-width="1"/>"##,
            pts.join(" ")
        );
    }
    let mut dot = |p: Point, color: &str| {
        let (x, y) = px(p);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#
        );
    };
    for t in trajs {
        dot(t.source, "#1f77b4");
        dot(t.target, "#d62728");
        dot(*t.points.last().unwrap(), "#2ca02c");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ZeroNoise;
    use crate::schedule::build_schedule;

    fn tab() -> ScheduleTable {
        build_schedule(&ScheduleConfig::default()).unwrap()
    }

    fn zero(_: u64) -> Box<dyn NoiseSource> {
        Box::new(ZeroNoise)
    }

    #[test]
    fn oracle_noiseless_paths_are_straight() {
        for pairing in [Pairing::Shift, Pairing::Swirl] {
            let task = ToyTask::new(pairing, 3);
            let trajs =
                roll_trajectories(&ToyOracle(pairing), &task, 20, &tab(), 1, &mut zero).unwrap();
            for t in &trajs {
                assert_eq!(t.points.len(), 16);
                assert!((t.ratio() - 1.0).abs() < 1e-6, "{}", t.ratio());
                let end = t.points.last().unwrap();
                assert!(dist(*end, t.target) < 1e-9);
            }
        }
    }

    #[test]
    fn x_crossing_counts_once() {
        let line = |a: Point, b: Point| -> Vec<Point> {
            (0..=15)
                .map(|i| {
                    let s = i as f64 / 15.0;
                    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
                })
                .collect()
        };
        let a = line([0.0, 0.0], [1.0, 1.0]);
        let b = line([0.0, 1.0], [1.0, 0.0]);
        assert_eq!(polyline_crossings(&a, &b), 1);
        let c = line([2.0, 0.0], [3.0, 1.0]);
        assert_eq!(polyline_crossings(&a, &c), 0);
        // Crossing exactly at a shared vertex.
        let v1 = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let v2 = vec![[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]];
        assert_eq!(polyline_crossings(&v1, &v2), 1);
    }

    #[test]
    fn report_rows_and_csv() {
        let task = ToyTask::new(Pairing::Shift, 0);
        let trajs =
            roll_trajectories(&ToyOracle(Pairing::Shift), &task, 50, &tab(), 2, &mut zero).unwrap();
        let rep = straightness_report(&trajs).unwrap();
        assert_eq!(rep.rows.len(), 50);
        // Parallel straight shifts never cross.
        assert_eq!(rep.crossings, 0);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 51);
        assert!(straightness_report(&[]).is_err());
        let svg = render_svg(&trajs, "shift");
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }

    #[test]
    fn path_never_shorter_than_chord() {
        let task = ToyTask::new(Pairing::Swirl, 0);
        let mut noisy = |s: u64| -> Box<dyn NoiseSource> { Box::new(SeededGaussian::new(s)) };
        let trajs = roll_trajectories(&ToyOracle(Pairing::Swirl), &task, 30, &tab(), 5, &mut noisy)
            .unwrap();
        for t in trajs {
            assert!(t.path() >= t.chord());
        }
    }

    #[test]
    fn too_few_samples() {
        let mut task = ToyTask::new(Pairing::Identity, 0);
        task.samples = 10;
        assert!(train_toy(&task, &tab(), &ToyTrainConfig::default()).is_err());
    }
}
