//! AdamW with decoupled weight decay:
//!
//! ```text
//! w <- w * (1 - lr * decay)
//! m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
//! w <- w - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use super::model::{DenoiserParams, Grads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn for_params(config: AdamWConfig, params: &DenoiserParams) -> Self {
        Self::new(config, params.blocks().iter().map(|b| b.value.len()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over parallel slices of parameters and gradients.
    /// `skip[i]` leaves block `i` (and its moments) untouched.
    pub fn update_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], skip: &[bool]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            if skip.get(i).copied().unwrap_or(false) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            assert_eq!(w.len(), g.len());
            for j in 0..w.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] *= 1.0 - c.lr * c.weight_decay;
                w[j] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }

    pub fn step(&mut self, params: &mut DenoiserParams, grads: &Grads) {
        let skip: Vec<bool> = params.blocks().iter().map(|b| b.frozen).collect();
        let g: Vec<&[f64]> = grads.blocks.iter().map(Vec::as_slice).collect();
        let mut p: Vec<&mut [f64]> = params
            .blocks_mut()
            .iter_mut()
            .map(|b| b.value.as_mut_slice())
            .collect();
        self.update_slices(&mut p, &g, &skip);
    }
}
