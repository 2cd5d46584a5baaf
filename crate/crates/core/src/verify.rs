//! Executable property suite: every check draws from its own seeded stream,
//! compares the library against an independently written oracle, and
//! reports a PASS/FAIL row. Output contains no timings, so two runs with the
//! same seed print identical bytes.

use std::cell::Cell;
use std::io::Write;

use crate::chain::{posterior, posterior_coeffs, sample, Predictor, ZeroNoise};
use crate::datagen::{dataset_scene, SceneConfig};
use crate::error::Result;
use crate::loss::{
    self, residual_elem, residual_elem_deriv, LossConfig, LossKind, PenaltyScope, RES_A, RES_B,
};
use crate::metrics::sam;
use crate::nn::{backward, forward, oracle_predictor, DenoiserParams, InputMode, NetConfig};
use crate::rng::{derive_seed, SeededGaussian};
use crate::schedule::{build_schedule, ScheduleConfig, ScheduleTable};
use crate::tensor::ImageTensor;
use crate::trajectory::{roll_trajectories, Pairing, ToyOracle, ToyTask};
use crate::wavelet::{db1_decompose, ConditionSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Monte Carlo moments of the iterated chain and of direct marginal draws,
/// per step, for a scalar `e0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub t: usize,
    pub expected_mean: f64,
    pub expected_var: f64,
    pub iterated: (f64, f64),
    pub direct: (f64, f64),
}

pub fn marginal_moments(tab: &ScheduleTable, e0: f64, n: usize, seed: u64) -> Vec<MarginalMoments> {
    let steps = tab.steps();
    let kappa = tab.kappa();
    let mut it_sum = vec![0.0; steps + 1];
    let mut it_sq = vec![0.0; steps + 1];
    let mut rng = SeededGaussian::new(derive_seed(seed, 0));
    for _ in 0..n {
        let mut e = e0;
        for t in 1..=steps {
            let a = tab.alpha(t);
            e = e - a * e0 + kappa * a.sqrt() * rng.normal();
            it_sum[t] += e;
            it_sq[t] += e * e;
        }
    }
    let mut rng = SeededGaussian::new(derive_seed(seed, 1));
    (1..=steps)
        .map(|t| {
            let ab = tab.alpha_bar(t);
            let (mut s, mut q) = (0.0, 0.0);
            for _ in 0..n {
                let v = (1.0 - ab) * e0 + kappa * ab.sqrt() * rng.normal();
                s += v;
                q += v * v;
            }
            let moments = |s: f64, q: f64| {
                let m = s / n as f64;
                (m, (q - n as f64 * m * m) / (n as f64 - 1.0))
            };
            MarginalMoments {
                t,
                expected_mean: (1.0 - ab) * e0,
                expected_var: kappa * kappa * ab,
                iterated: moments(it_sum[t], it_sq[t]),
                direct: moments(s, q),
            }
        })
        .collect()
}

impl MarginalMoments {
    /// Mean within `3 sigma / sqrt(n)` and variance within 2 % of the
    /// analytic marginal, for both samplers.
    pub fn within_bounds(&self, n: usize) -> bool {
        let tol = 3.0 * (self.expected_var / n as f64).sqrt();
        [self.iterated, self.direct].iter().all(|&(m, v)| {
            (m - self.expected_mean).abs() <= tol
                && (v - self.expected_var).abs() <= 0.02 * self.expected_var
        })
    }
}

fn check_marginal(p: f64, seed: u64) -> Result<Check> {
    const N: usize = 100_000;
    let tab = build_schedule(&ScheduleConfig {
        steps: 15,
        p,
        kappa: 1.0,
    })?;
    let rows = marginal_moments(&tab, 0.5, N, seed);
    let bad: Vec<usize> = rows
        .iter()
        .filter(|r| !r.within_bounds(N))
        .map(|r| r.t)
        .collect();
    let worst = rows
        .iter()
        .map(|r| {
            let sd = (r.expected_var / N as f64).sqrt();
            ((r.iterated.0 - r.expected_mean).abs() / sd)
                .max((r.direct.0 - r.expected_mean).abs() / sd)
        })
        .fold(0.0, f64::max);
    Ok(Check::new(
        format!("marginal_equivalence p={p}"),
        bad.is_empty(),
        format!("worst mean deviation {worst:.3} sigma; steps out of bounds {bad:?}"),
    ))
}

/// Precision-weighted fusion of `N(e_t + alpha_t e0, k^2 alpha_t)` and
/// `N((1 - abar_{t-1}) e0, k^2 abar_{t-1})`.
pub fn product_of_gaussians(tab: &ScheduleTable, t: usize, e_t: f64, e0: f64) -> (f64, f64) {
    let k2 = tab.kappa() * tab.kappa();
    let (m1, v1) = (e_t + tab.alpha(t) * e0, k2 * tab.alpha(t));
    let (m2, v2) = ((1.0 - tab.alpha_bar(t - 1)) * e0, k2 * tab.alpha_bar(t - 1));
    let prec = 1.0 / v1 + 1.0 / v2;
    ((m1 / v1 + m2 / v2) / prec, (1.0 / prec).sqrt())
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn check_posterior(seed: u64) -> Result<Vec<Check>> {
    let mut rng = SeededGaussian::new(derive_seed(seed, 2));
    let mut worst = 0.0f64;
    let mut on_path = 0.0f64;
    for _ in 0..1000 {
        let cfg = ScheduleConfig {
            steps: 2 + rng.below(49) as usize,
            p: 10f64.powf(rng.uniform_range(-3.0, 0.0)),
            kappa: rng.uniform_range(0.1, 2.0),
        };
        let tab = build_schedule(&cfg)?;
        let t = 2 + rng.below(cfg.steps as u64 - 1) as usize;
        let (e_t, e0) = (rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0));
        let k = posterior_coeffs(&tab, t)?;
        let (m, s) = product_of_gaussians(&tab, t, e_t, e0);
        let mean = k.mean(e_t, e0);
        worst = worst
            .max(rel(mean, m, m.abs().max(e_t.abs() + e0.abs())))
            .max(rel(k.std, s, s));
        let path = (1.0 - tab.alpha_bar(t)) * e0;
        on_path = on_path.max(rel(
            k.mean(path, e0),
            (1.0 - tab.alpha_bar(t - 1)) * e0,
            e0.abs(),
        ));
    }
    let tab = build_schedule(&ScheduleConfig::default())?;
    let e_t = ImageTensor::filled(1, 2, 2, 0.3);
    let e0 = ImageTensor::filled(1, 2, 2, -0.4);
    let p1 = posterior(&e_t, &e0, 1, &tab)?;
    Ok(vec![
        Check::new(
            "posterior_product_of_gaussians",
            worst <= 1e-10,
            format!("1000 cases, max relative error {worst:.2e}"),
        ),
        Check::new(
            "posterior_on_marginal_path",
            on_path <= 1e-10,
            format!("max relative error {on_path:.2e}"),
        ),
        Check::new(
            "posterior_t1_deterministic",
            p1.std == 0.0 && p1.mean == e0,
            format!("std {}", p1.std),
        ),
    ])
}

struct Counting<P> {
    inner: P,
    calls: Cell<usize>,
}

impl<P: Predictor> Predictor for Counting<P> {
    fn predict(
        &self,
        x_t: &ImageTensor,
        cond: &ConditionSet,
        t: usize,
        steps: usize,
    ) -> Result<ImageTensor> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(x_t, cond, t, steps)
    }
}

fn check_oracle_sampler(seed: u64) -> Result<Check> {
    let tab = build_schedule(&ScheduleConfig::default())?;
    let cfg = SceneConfig {
        seed: derive_seed(seed, 3),
        ..Default::default()
    };
    let (mut err, mut worst_sam, mut calls_ok) = (0.0f64, 0.0f64, true);
    for i in 0..20 {
        let scene = dataset_scene(&cfg, i)?;
        let cond = ConditionSet::build(&scene.lrms, &scene.pan)?;
        let lrms = cond.lrms.clone();
        let pred = Counting {
            inner: oracle_predictor(&scene.hrms, &lrms)?,
            calls: Cell::new(0),
        };
        let mut rng = SeededGaussian::new(derive_seed(seed, 100 + i as u64));
        let out = sample(&lrms, &cond, &pred, &tab, &mut rng)?;
        calls_ok &= pred.calls.get() == tab.steps();
        for (a, b) in out.x0_hat.data().iter().zip(scene.hrms.data()) {
            err = err.max((a - b).abs() as f64);
        }
        worst_sam = worst_sam.max(sam(&out.x0_hat, &scene.hrms)?);
    }
    Ok(Check::new(
        "oracle_sampler_exact",
        err < 1e-5 && worst_sam < 1e-3 && calls_ok,
        format!(
            "20 scenes, max error {err:.2e}, max SAM {worst_sam:.2e} deg, {} calls each",
            tab.steps()
        ),
    ))
}

fn check_loss(seed: u64) -> Result<Vec<Check>> {
    let (inner, outer) = (2.0 - (-1.0f64).exp(), (1.0 + RES_A).powi(2) + RES_B);
    let (d_inner, d_outer) = (1.0 + (-1.0f64).exp(), 2.0 * (1.0 + RES_A));
    let c0 = (inner - outer)
        .abs()
        .max((residual_elem(1.0) - inner).abs());
    let c1 = (d_inner - d_outer)
        .abs()
        .max((residual_elem_deriv(1.0) - d_inner).abs());
    let at2 = (residual_elem(2.0) - 4.0).abs();

    let mut rng = SeededGaussian::new(derive_seed(seed, 4));
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = 48;
        let target: Vec<f64> = (0..n).map(|_| rng.normal() * 0.5).collect();
        let pred: Vec<f64> = target.iter().map(|&v| v + rng.normal() * 1.2).collect();
        let kinds = [
            LossConfig {
                kind: LossKind::Res,
                gamma: 0.0,
                scope: PenaltyScope::Global,
            },
            LossConfig {
                kind: LossKind::L1,
                gamma: 0.0,
                scope: PenaltyScope::Global,
            },
            LossConfig {
                kind: LossKind::L2,
                gamma: 0.0,
                scope: PenaltyScope::Global,
            },
            LossConfig {
                kind: LossKind::Res,
                gamma: 0.5 + case as f64,
                scope: PenaltyScope::Global,
            },
        ];
        let (lo, hi) = target
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        for cfg in kinds {
            let an = cfg.eval(&pred, &target, 3)?;
            for i in 0..n {
                let h = target[i] - pred[i];
                let near_kink = (h.abs() - 1.0).abs() < 1e-3
                    || h.abs() < 1e-3
                    || (pred[i] - lo).abs() < 1e-3
                    || (pred[i] - hi).abs() < 1e-3;
                if near_kink {
                    continue;
                }
                let step = 1e-4;
                let mut p = pred.clone();
                p[i] = pred[i] + step;
                let up = cfg.eval(&p, &target, 3)?.value;
                p[i] = pred[i] - step;
                let down = cfg.eval(&p, &target, 3)?.value;
                let fd = (up - down) / (2.0 * step);
                worst = worst.max(rel(an.grad[i], fd, an.grad[i].abs().max(fd.abs())));
            }
        }
    }

    // Where 1 + e^{-h} exceeds both 1 and 2h on the open unit interval.
    let grid: Vec<f64> = (1..1000).map(|k| k as f64 / 1000.0).collect();
    let fails: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&h| 1.0 + (-h).exp() <= 1.0f64.max(2.0 * h))
        .collect();
    let dominance = match fails.first() {
        None => "holds on all 999 grid points".to_string(),
        Some(h) => format!(
            "fails on {} of 999 grid points, first at h={h:.3} (1+e^-h crosses 2h near {:.4})",
            fails.len(),
            dominance_crossover()
        ),
    };
    Ok(vec![
        Check::new("loss_res_c0_seam", c0 <= 1e-9, format!("|gap| {c0:.2e}")),
        Check::new("loss_res_c1_seam", c1 <= 1e-9, format!("|gap| {c1:.2e}")),
        Check::new(
            "loss_res_at_2_is_4",
            at2 <= 1e-12,
            format!("|L(2)-4| {at2:.2e}"),
        ),
        Check::new(
            "loss_finite_difference",
            worst <= 1e-5,
            format!("res/l1/l2/full, 100 cases, max relative error {worst:.2e}"),
        ),
        Check::new("loss_derivative_dominance", fails.is_empty(), dominance),
    ])
}

/// Root of `1 + e^{-h} = 2h`, by bisection.
pub fn dominance_crossover() -> f64 {
    let f = |h: f64| 1.0 + (-h).exp() - 2.0 * h;
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Central differences over every parameter of a small network. Returns
/// (parameters checked, failures, worst relative error among non-negligible
/// gradients).
pub fn gradient_check(
    config: NetConfig,
    loss: &LossConfig,
    size: usize,
    seed: u64,
) -> Result<(usize, usize, f64)> {
    let bands = config.bands;
    let mut rng = SeededGaussian::new(derive_seed(seed, 5));
    let mut params = DenoiserParams::randomized(config, derive_seed(seed, 6))?;
    let field = |rng: &mut SeededGaussian, c: usize, h: usize| {
        ImageTensor::from_fn(c, h, h, |_, _, _| rng.uniform() as f32)
    };
    let lrms = field(&mut rng, bands, size);
    let pan = field(&mut rng, 1, size);
    let cond = ConditionSet::build(&lrms, &pan)?;
    let x_t = field(&mut rng, bands, size);
    let target: Vec<f64> = (0..x_t.len()).map(|_| rng.normal() * 0.3).collect();
    let t = 7;
    let eval = |p: &DenoiserParams| -> Result<f64> {
        let (out, _) = forward(p, &x_t, &cond, t, 15)?;
        Ok(loss.eval(&out, &target, bands)?.value)
    };
    let (out, cache) = forward(&params, &x_t, &cond, t, 15)?;
    let rep = loss.eval(&out, &target, bands)?;
    let grads = backward(&params, &cache, &rep.grad)?;
    let (mut checked, mut failed, mut worst) = (0, 0, 0.0f64);
    let step = 1e-6;
    for b in 0..params.blocks().len() {
        for i in 0..params.blocks()[b].value.len() {
            let orig = params.blocks()[b].value[i];
            params.blocks_mut()[b].value[i] = orig + step;
            let up = eval(&params)?;
            params.blocks_mut()[b].value[i] = orig - step;
            let down = eval(&params)?;
            params.blocks_mut()[b].value[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = grads.blocks[b][i];
            let err = (an - fd).abs();
            let scale = an.abs().max(fd.abs());
            checked += 1;
            if err > 1e-6 && err > 1e-4 * scale {
                failed += 1;
            }
            if scale > 1e-8 {
                worst = worst.max(err / scale);
            }
        }
    }
    Ok((checked, failed, worst))
}

fn check_gradients(seed: u64) -> Result<Check> {
    let mut cfg = NetConfig::new(2);
    cfg.hidden = 4;
    cfg.blocks = 2;
    cfg.embed_dim = 4;
    let mut no_sci = cfg;
    no_sci.sci = false;
    no_sci.input = InputMode::Residual;
    let loss = LossConfig {
        kind: LossKind::Res,
        gamma: 2.0,
        scope: PenaltyScope::Global,
    };
    let (mut total, mut failed, mut worst) = (0, 0, 0.0f64);
    for (k, c) in [cfg, no_sci].into_iter().enumerate() {
        let (n, f, w) = gradient_check(c, &loss, 4, derive_seed(seed, 7 + k as u64))?;
        total += n;
        failed += f;
        worst = worst.max(w);
    }
    Ok(Check::new(
        "denoiser_gradient_check",
        failed == 0,
        format!("{total} parameters, {failed} outside 1e-4 rel / 1e-6 abs, worst rel {worst:.2e}"),
    ))
}

fn check_wavelet(seed: u64) -> Result<Check> {
    let mut rng = SeededGaussian::new(derive_seed(seed, 9));
    let (mut recon, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let c = 1 + rng.below(4) as usize;
        let h = 2 * (1 + rng.below(8) as usize);
        let w = 2 * (1 + rng.below(8) as usize);
        let img = ImageTensor::from_fn(c, h, w, |_, _, _| rng.uniform() as f32);
        let q = db1_decompose(&img)?;
        let back = q.inverse()?;
        for (a, b) in back.data().iter().zip(img.data()) {
            recon = recon.max((a - b).abs() as f64);
        }
        let sq = |t: &ImageTensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        let e_in = sq(&img);
        let e_out: f64 = q.components().iter().map(|(_, t)| sq(t)).sum();
        energy = energy.max((e_in - e_out).abs() / e_in.max(1e-12));
    }
    Ok(Check::new(
        "wavelet_perfect_reconstruction",
        recon <= 1e-6 && energy <= 1e-6,
        format!("1000 images, max reconstruction error {recon:.2e}, max relative energy gap {energy:.2e}"),
    ))
}

fn check_trajectories(seed: u64) -> Result<Check> {
    let tab = build_schedule(&ScheduleConfig {
        kappa: 0.1,
        ..Default::default()
    })?;
    let mut worst = 0.0f64;
    let mut zero = |_: u64| -> Box<dyn crate::chain::NoiseSource> { Box::new(ZeroNoise) };
    for pairing in [Pairing::Shift, Pairing::Swirl] {
        let task = ToyTask::new(pairing, derive_seed(seed, 10));
        let trajs = roll_trajectories(
            &ToyOracle(pairing),
            &task,
            50,
            &tab,
            derive_seed(seed, 11),
            &mut zero,
        )?;
        for t in &trajs {
            worst = worst.max((t.ratio() - 1.0).abs());
        }
    }
    Ok(Check::new(
        "trajectory_oracle_straight",
        worst <= 1e-6,
        format!("shift+swirl, 50 each, max |ratio - 1| {worst:.2e}"),
    ))
}

fn check_schedule() -> Result<Check> {
    let mut ok = true;
    for p in [8e-3, 8e-2, 8e-1] {
        let tab = build_schedule(&ScheduleConfig {
            steps: 15,
            p,
            kappa: 1.0,
        })?;
        let ab = tab.alpha_bars();
        ok &= ab[0] == 0.0 && ab[15] == 1.0;
        ok &= ab.windows(2).all(|w| w[1] > w[0]);
        ok &= (1..=15)
            .all(|t| (tab.alpha_bar(t) - tab.alpha_bar(t - 1) - tab.alpha(t)).abs() < 1e-15);
    }
    Ok(Check::new(
        "schedule_endpoints_monotone",
        ok,
        "abar_0 = 0, abar_T = 1, strictly increasing, alpha_t = abar_t - abar_{t-1}",
    ))
}

/// Runs every check in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![check_schedule()?];
    for p in [8e-3, 8e-2, 8e-1] {
        out.push(check_marginal(p, derive_seed(seed, (p * 1000.0) as u64))?);
    }
    out.extend(check_posterior(seed)?);
    out.push(check_oracle_sampler(seed)?);
    out.extend(check_loss(seed)?);
    out.push(check_gradients(seed)?);
    out.push(check_wavelet(seed)?);
    out.push(check_trajectories(seed)?);
    // Keep the loss module's tensor wrappers honest against the slice forms.
    let a = ImageTensor::filled(1, 2, 2, 0.5);
    let b = ImageTensor::filled(1, 2, 2, -0.25);
    let full = loss::full_loss(&a, &b, 10.0)?;
    out.push(Check::new(
        "loss_full_composition",
        (full.value - (residual_elem(0.75) + 10.0 * 0.75)).abs() < 1e-12,
        format!("value {:.12}", full.value),
    ));
    Ok(out)
}

pub fn write_table(checks: &[Check], mut out: impl Write) -> std::io::Result<()> {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{:<width$}  {status}  {}", c.name, c.detail)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(
        out,
        "{} checks, {} passed, {} failed",
        checks.len(),
        checks.len() - failed,
        failed
    )
}
