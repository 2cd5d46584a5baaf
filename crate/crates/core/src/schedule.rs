//! Cosine noise schedule over residual steps.
//!
//! `alpha_bar[t] = 1 - f(t) / f(0)` with
//! `f(t) = cos(((t / T + p) / (1 + p)) * pi / 2)`. `alpha_bar[0] = 0` and
//! `alpha_bar[T]` is pinned to exactly 1 (f(T) is zero analytically; the
//! float residue of `cos(pi/2)` is discarded). Per-step increments are the
//! differences `alpha[t] = alpha_bar[t] - alpha_bar[t - 1]`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Number of chain steps.
    pub steps: usize,
    /// Cosine offset hyperparameter; larger values put more noise early.
    pub p: f64,
    /// Noise scale multiplying every chain standard deviation.
    pub kappa: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 15,
            p: 8e-3,
            kappa: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("schedule", "T must be >= 1"));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::config(
                "schedule",
                format!("p must be > 0, got {}", self.p),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::config(
                "schedule",
                format!("kappa must be > 0, got {}", self.kappa),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    /// `alpha[t]` for `t` in `0..=T`; `alpha[0]` is unused and kept at 0.
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    kappa: f64,
}

/// Unnormalized cosine profile `f(t)`.
pub fn cosine_profile(t: f64, steps: usize, p: f64) -> f64 {
    ((t / steps as f64 + p) / (1.0 + p) * FRAC_PI_2).cos()
}

pub fn build_schedule(cfg: &ScheduleConfig) -> Result<ScheduleTable> {
    cfg.validate()?;
    let steps = cfg.steps;
    let f0 = cosine_profile(0.0, steps, cfg.p);
    let mut alpha_bar: Vec<f64> = (0..=steps)
        .map(|t| 1.0 - cosine_profile(t as f64, steps, cfg.p) / f0)
        .collect();
    alpha_bar[0] = 0.0;
    alpha_bar[steps] = 1.0;
    let mut alpha = vec![0.0; steps + 1];
    for t in 1..=steps {
        alpha[t] = alpha_bar[t] - alpha_bar[t - 1];
    }
    if let Some(t) = (1..=steps).find(|&t| !(alpha[t] > 0.0)) {
        return Err(Error::config(
            "schedule",
            format!("non-positive step alpha[{t}] = {}", alpha[t]),
        ));
    }
    Ok(ScheduleTable {
        alpha,
        alpha_bar,
        kappa: cfg.kappa,
    })
}

/// Closed-form coefficients of `q(e_t | e_0) = N(coeff * e_0, std^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalParams {
    pub coeff: f64,
    pub std: f64,
}

impl ScheduleTable {
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, module: &'static str, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::StepRange {
                module,
                t,
                lo,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    /// `(1 - alpha_bar[t], kappa * sqrt(alpha_bar[t]))` for `1 <= t <= T`.
    pub fn marginal_params(&self, t: usize) -> Result<MarginalParams> {
        self.check_step("schedule", t, 1)?;
        Ok(self.marginal_unchecked(t))
    }

    /// As `marginal_params` but also defined at `t = 0`, where it is `(1, 0)`.
    pub(crate) fn marginal_unchecked(&self, t: usize) -> MarginalParams {
        MarginalParams {
            coeff: 1.0 - self.alpha_bar[t],
            std: self.kappa * self.alpha_bar[t].sqrt(),
        }
    }

    /// Writes `t,alpha,alpha_bar,marginal_coeff,marginal_std` rows for
    /// `t = 0..=T`. Row 0 carries `alpha = 0` and the degenerate `(1, 0)`
    /// marginal.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,alpha,alpha_bar,marginal_coeff,marginal_std")?;
        for t in 0..=self.steps() {
            let m = self.marginal_unchecked(t);
            writeln!(
                out,
                "{t},{},{},{},{}",
                self.alpha[t], self.alpha_bar[t], m.coeff, m.std
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(steps: usize, p: f64) -> ScheduleTable {
        build_schedule(&ScheduleConfig {
            steps,
            p,
            kappa: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn endpoints() {
        let tab = table(15, 8e-3);
        assert_eq!(tab.alpha_bar(0), 0.0);
        assert_eq!(tab.alpha_bar(15), 1.0);
        let sum: f64 = tab.alphas().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_step_grows_with_p() {
        let a: Vec<f64> = [8e-3, 8e-2, 8e-1]
            .iter()
            .map(|&p| table(15, p).alpha_bar(1))
            .collect();
        assert!(a[0] < a[1] && a[1] < a[2], "{a:?}");
    }

    #[test]
    fn steps_positive_and_increasing_on_grid() {
        for i in 0..10 {
            for j in 0..10 {
                let steps = 1 + i * 7;
                let p = 1e-3 * 10f64.powf(j as f64 * 0.4);
                let tab = table(steps, p);
                for t in 1..=steps {
                    assert!(tab.alpha(t) > 0.0, "T={steps} p={p} t={t}");
                    assert!(tab.alpha_bar(t) > tab.alpha_bar(t - 1));
                }
            }
        }
    }

    #[test]
    fn larger_p_dominates() {
        for steps in [2, 5, 15, 40] {
            let lo = table(steps, 0.01);
            let hi = table(steps, 0.3);
            for t in 1..steps {
                assert!(hi.alpha_bar(t) > lo.alpha_bar(t));
            }
        }
    }

    #[test]
    fn marginal_at_ends() {
        let tab = build_schedule(&ScheduleConfig {
            kappa: 0.7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(
            tab.marginal_params(15).unwrap(),
            MarginalParams {
                coeff: 0.0,
                std: 0.7
            }
        );
        assert_eq!(
            tab.marginal_unchecked(0),
            MarginalParams {
                coeff: 1.0,
                std: 0.0
            }
        );
        assert!(tab.marginal_params(0).is_err());
        assert!(tab.marginal_params(16).is_err());
        let stds: Vec<f64> = (1..=15)
            .map(|t| tab.marginal_params(t).unwrap().std)
            .collect();
        assert!(stds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            ScheduleConfig {
                steps: 0,
                ..Default::default()
            },
            ScheduleConfig {
                p: 0.0,
                ..Default::default()
            },
            ScheduleConfig {
                p: -1.0,
                ..Default::default()
            },
            ScheduleConfig {
                kappa: 0.0,
                ..Default::default()
            },
        ] {
            assert!(build_schedule(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn csv_has_header_and_t_plus_one_rows() {
        let mut buf = Vec::new();
        table(15, 8e-3).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,alpha,alpha_bar,marginal_coeff,marginal_std");
        assert_eq!(lines.len(), 17);
        assert!(lines[16].starts_with("15,"));
    }
}
