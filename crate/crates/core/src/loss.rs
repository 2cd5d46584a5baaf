//! Residual-regression losses and their analytic gradients.
//!
//! All losses are means over elements. Gradients are taken with respect to
//! the prediction `e0_hat`; with `h = e0 - e0_hat` that is `-dL/dh / N`.
//! Kinks (`h = 0` for the absolute-value terms, clamp boundaries of the
//! range penalty) get subgradient 0.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Offset of the quadratic branch: `1/(2e) - 1/2`.
pub const RES_A: f64 = 1.0 / (2.0 * E) - 0.5;
/// Constant of the quadratic branch: `7/4 - 3/(2e) - 1/(4e^2)`.
pub const RES_B: f64 = 1.75 - 1.5 / E - 1.0 / (4.0 * E * E);
/// Default weight of the range penalty.
pub const DEFAULT_GAMMA: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// d(value)/d(e0_hat), one entry per element.
    pub grad: Vec<f64>,
}

impl LossReport {
    pub fn grad_tensor(&self, like: &ImageTensor) -> ImageTensor {
        ImageTensor::from_f64(like.shape(), self.grad.iter().copied())
    }

    fn axpy(&mut self, k: f64, other: &LossReport) {
        self.value += k * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += k * o;
        }
    }
}

/// Per-element residual loss of `h`: `|h| + 1 - e^{-|h|}` inside the unit
/// band, `(|h| + a)^2 + b` outside. C1 at `|h| = 1`.
pub fn residual_elem(h: f64) -> f64 {
    let m = h.abs();
    if m < 1.0 {
        m + (1.0 - (-m).exp())
    } else {
        (m + RES_A).powi(2) + RES_B
    }
}

/// dL/dh of [`residual_elem`]; 0 at `h = 0`.
pub fn residual_elem_deriv(h: f64) -> f64 {
    if h == 0.0 {
        return 0.0;
    }
    let m = h.abs();
    let d = if m < 1.0 {
        1.0 + (-m).exp()
    } else {
        2.0 * (m + RES_A)
    };
    d * h.signum()
}

fn check_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape {
            op: "loss",
            expected: (target.len(), 1, 1),
            got: (pred.len(), 1, 1),
        });
    }
    Ok(())
}

fn elementwise(
    pred: &[f64],
    target: &[f64],
    value: impl Fn(f64) -> f64,
    deriv: impl Fn(f64) -> f64,
) -> Result<LossReport> {
    check_len(pred, target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let h = t - p;
            total += value(h);
            -deriv(h) / n
        })
        .collect();
    Ok(LossReport {
        value: total / n,
        grad,
    })
}

pub fn residual_loss_slice(pred: &[f64], target: &[f64]) -> Result<LossReport> {
    elementwise(pred, target, residual_elem, residual_elem_deriv)
}

pub fn l1_loss_slice(pred: &[f64], target: &[f64]) -> Result<LossReport> {
    elementwise(pred, target, f64::abs, |h| {
        if h == 0.0 {
            0.0
        } else {
            h.signum()
        }
    })
}

pub fn l2_loss_slice(pred: &[f64], target: &[f64]) -> Result<LossReport> {
    elementwise(pred, target, |h| h * h, |h| 2.0 * h)
}

/// Where the range penalty takes its min/max of the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PenaltyScope {
    /// Extremes over the whole target tensor.
    #[default]
    Global,
    /// Extremes per band.
    PerBand,
}

/// `mean(relu(e0_hat - max e0) + relu(min e0 - e0_hat))`.
pub fn boundary_penalty_slice(
    pred: &[f64],
    target: &[f64],
    bands: usize,
    scope: PenaltyScope,
) -> Result<LossReport> {
    check_len(pred, target)?;
    let groups = match scope {
        PenaltyScope::Global => 1,
        PenaltyScope::PerBand => bands.max(1),
    };
    if !target.len().is_multiple_of(groups) {
        return Err(Error::config(
            "loss",
            "target length not divisible by bands",
        ));
    }
    let n = pred.len() as f64;
    let chunk = target.len() / groups;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for g in 0..groups {
        let range = g * chunk..(g + 1) * chunk;
        let tgt = &target[range.clone()];
        let hi = tgt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tgt.iter().copied().fold(f64::INFINITY, f64::min);
        for i in range {
            let p = pred[i];
            if p > hi {
                value += p - hi;
                grad[i] = 1.0 / n;
            } else if p < lo {
                value += lo - p;
                grad[i] = -1.0 / n;
            }
        }
    }
    Ok(LossReport {
        value: value / n,
        grad,
    })
}

/// Data term selector for training ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossKind {
    #[default]
    Res,
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "res" => Ok(LossKind::Res),
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(format!("unknown loss {other:?} (expected res, l1, l2)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Res => "res",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

/// Data term plus `gamma` times the range penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
    pub scope: PenaltyScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Res,
            gamma: DEFAULT_GAMMA,
            scope: PenaltyScope::Global,
        }
    }
}

impl LossConfig {
    pub fn eval(&self, pred: &[f64], target: &[f64], bands: usize) -> Result<LossReport> {
        if !(self.gamma >= 0.0) {
            return Err(Error::config(
                "loss",
                format!("gamma must be >= 0, got {}", self.gamma),
            ));
        }
        let mut report = match self.kind {
            LossKind::Res => residual_loss_slice(pred, target)?,
            LossKind::L1 => l1_loss_slice(pred, target)?,
            LossKind::L2 => l2_loss_slice(pred, target)?,
        };
        if self.gamma > 0.0 {
            let pen = boundary_penalty_slice(pred, target, bands, self.scope)?;
            report.axpy(self.gamma, &pen);
        }
        Ok(report)
    }
}

fn widen(t: &ImageTensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn on_tensors(
    e0_hat: &ImageTensor,
    e0: &ImageTensor,
    f: impl FnOnce(&[f64], &[f64]) -> Result<LossReport>,
) -> Result<LossReport> {
    e0_hat.check_same(e0, "loss")?;
    f(&widen(e0_hat), &widen(e0))
}

pub fn residual_loss(e0_hat: &ImageTensor, e0: &ImageTensor) -> Result<LossReport> {
    on_tensors(e0_hat, e0, residual_loss_slice)
}

pub fn l1_loss(e0_hat: &ImageTensor, e0: &ImageTensor) -> Result<LossReport> {
    on_tensors(e0_hat, e0, l1_loss_slice)
}

pub fn l2_loss(e0_hat: &ImageTensor, e0: &ImageTensor) -> Result<LossReport> {
    on_tensors(e0_hat, e0, l2_loss_slice)
}

pub fn boundary_penalty(e0_hat: &ImageTensor, e0: &ImageTensor) -> Result<LossReport> {
    on_tensors(e0_hat, e0, |p, t| {
        boundary_penalty_slice(p, t, e0.bands(), PenaltyScope::Global)
    })
}

/// `residual + gamma * penalty`.
pub fn full_loss(e0_hat: &ImageTensor, e0: &ImageTensor, gamma: f64) -> Result<LossReport> {
    let cfg = LossConfig {
        gamma,
        ..Default::default()
    };
    on_tensors(e0_hat, e0, |p, t| cfg.eval(p, t, e0.bands()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> ImageTensor {
        ImageTensor::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn zero_residual() {
        let a = t(&[0.1, -0.3, 0.7]);
        for r in [
            residual_loss(&a, &a).unwrap(),
            l1_loss(&a, &a).unwrap(),
            l2_loss(&a, &a).unwrap(),
            boundary_penalty(&a, &a).unwrap(),
        ] {
            assert_eq!(r.value, 0.0);
            assert!(r.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn seam_is_c1() {
        let inner = 1.0 + (1.0 - (-1.0f64).exp());
        let outer = (1.0 + RES_A).powi(2) + RES_B;
        assert!((inner - outer).abs() < 1e-12);
        assert!((inner - (2.0 - (-1.0f64).exp())).abs() < 1e-15);
        let d_in = 1.0 + (-1.0f64).exp();
        let d_out = 2.0 * (1.0 + RES_A);
        assert!((d_in - d_out).abs() < 1e-12);
    }

    #[test]
    fn value_at_two_is_four() {
        assert!((residual_elem(2.0) - 4.0).abs() < 1e-12);
        assert!((residual_elem(-2.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_outside_range() {
        let e0 = t(&[-0.2, 0.0, 0.4, 0.1]);
        let pred = t(&[0.5; 4]);
        let r = boundary_penalty(&pred, &e0).unwrap();
        assert!((r.value - 0.1).abs() < 1e-7, "{}", r.value);
        assert!(r.grad.iter().all(|&g| g == 0.25));
        let full = full_loss(&pred, &e0, DEFAULT_GAMMA).unwrap();
        let res = residual_loss(&pred, &e0).unwrap();
        assert!((full.value - (res.value + 1000.0)).abs() < 1e-2);
    }

    #[test]
    fn in_range_full_is_residual() {
        let e0 = t(&[-0.2, 0.0, 0.4, 0.1]);
        let pred = t(&[0.3, -0.1, 0.0, 0.2]);
        assert_eq!(boundary_penalty(&pred, &e0).unwrap().value, 0.0);
        assert_eq!(
            full_loss(&pred, &e0, DEFAULT_GAMMA).unwrap(),
            residual_loss(&pred, &e0).unwrap()
        );
        let far = t(&[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(
            full_loss(&far, &e0, 0.0).unwrap(),
            residual_loss(&far, &e0).unwrap()
        );
    }

    #[test]
    fn gradient_magnitudes_at_half() {
        let pred = t(&[0.0, 0.0]);
        let e0 = t(&[0.5, 0.5]);
        let n = 2.0;
        let l2 = l2_loss(&pred, &e0).unwrap();
        let l1 = l1_loss(&pred, &e0).unwrap();
        let res = residual_loss(&pred, &e0).unwrap();
        assert!((l2.grad[0].abs() - 1.0 / n).abs() < 1e-12);
        assert!((l1.grad[0].abs() - 1.0 / n).abs() < 1e-12);
        assert!((res.grad[0].abs() - (1.0 + (-0.5f64).exp()) / n).abs() < 1e-12);
    }

    #[test]
    fn per_band_penalty() {
        // Band 0 spans [0, 1], band 1 spans [0, 0.1]; 0.5 only violates band 1.
        let target = [0.0, 1.0, 0.0, 0.1];
        let pred = [0.5; 4];
        let g = boundary_penalty_slice(&pred, &target, 2, PenaltyScope::Global).unwrap();
        let b = boundary_penalty_slice(&pred, &target, 2, PenaltyScope::PerBand).unwrap();
        assert_eq!(g.value, 0.0);
        assert!((b.value - 0.8 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(residual_loss(&t(&[0.0]), &t(&[0.0, 1.0])).is_err());
        assert!(LossConfig {
            gamma: -1.0,
            ..Default::default()
        }
        .eval(&[0.0], &[0.0], 1)
        .is_err());
    }

    #[test]
    fn loss_kind_parse() {
        assert_eq!("l1".parse::<LossKind>().unwrap(), LossKind::L1);
        assert!("huber".parse::<LossKind>().is_err());
    }
}
