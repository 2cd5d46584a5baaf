//! The residual predictor `f(x_t, c, t)`.
//!
//! ```text
//! input  = [x_t (or e_t), condition stack]          (stack omitted with sci = false)
//! z0     = conv3x3(input)                           shallow injection
//! a0     = silu(z0 * (1 + scale(t)) + shift(t))     sinusoidal time modulation
//! a_k    = a_{k-1} + silu(conv3x3_k(a_{k-1}))       k = 1..=blocks
//!          (+ conv3x3(condition) inside block 1 when sci = false)
//! e0_hat = conv3x3(a_K)
//! ```
//!
//! All convolutions use replicate padding. Weights are initialised
//! uniform in `±1/sqrt(fan_in)`, biases at zero.

use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward};
use crate::chain::Predictor;
use crate::error::{Error, Result};
use crate::rng::SeededGaussian;
use crate::tensor::ImageTensor;
use crate::wavelet::ConditionSet;

/// What the first `bands` input channels carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InputMode {
    /// Latent state `x_t = e_t + x_T`.
    #[default]
    Latent,
    /// Bare residual `e_t`.
    Residual,
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xt" => Ok(InputMode::Latent),
            "et" => Ok(InputMode::Residual),
            other => Err(format!("unknown input {other:?} (expected xt, et)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub bands: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    /// Condition enters at the shallow layer (otherwise it is added inside
    /// the first hidden block).
    pub sci: bool,
    pub input: InputMode,
}

impl NetConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            hidden: 32,
            blocks: 3,
            embed_dim: 32,
            sci: true,
            input: InputMode::Latent,
        }
    }

    pub fn cond_channels(&self) -> usize {
        ConditionSet::channels_for(self.bands)
    }

    pub fn shallow_in(&self) -> usize {
        if self.sci {
            self.bands + self.cond_channels()
        } else {
            self.bands
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0
            || self.hidden == 0
            || self.embed_dim == 0
            || !self.embed_dim.is_multiple_of(2)
        {
            return Err(Error::config(
                "denoiser",
                format!("invalid network shape {self:?} (embed_dim must be even)"),
            ));
        }
        Ok(())
    }

    /// Named parameter blocks in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (h, e) = (self.hidden, self.embed_dim);
        let mut v = vec![
            (
                "shallow.weight".to_string(),
                vec![h, self.shallow_in(), 3, 3],
            ),
            ("shallow.bias".to_string(), vec![h]),
            ("time.scale.weight".to_string(), vec![h, e]),
            ("time.scale.bias".to_string(), vec![h]),
            ("time.shift.weight".to_string(), vec![h, e]),
            ("time.shift.bias".to_string(), vec![h]),
        ];
        for k in 0..self.blocks {
            v.push((format!("block{k}.weight"), vec![h, h, 3, 3]));
            v.push((format!("block{k}.bias"), vec![h]));
        }
        if !self.sci {
            v.push((
                "cond.weight".to_string(),
                vec![h, self.cond_channels(), 3, 3],
            ));
            v.push(("cond.bias".to_string(), vec![h]));
        }
        v.push(("out.weight".to_string(), vec![self.bands, h, 3, 3]));
        v.push(("out.bias".to_string(), vec![self.bands]));
        v
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub frozen: bool,
}

// Fixed block indices; the layout always starts with these six.
const SHALLOW_W: usize = 0;
const SHALLOW_B: usize = 1;
const SCALE_W: usize = 2;
const SCALE_B: usize = 3;
const SHIFT_W: usize = 4;
const SHIFT_B: usize = 5;
const FIRST_BLOCK: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: NetConfig,
    blocks: Vec<ParamBlock>,
    generation: u64,
}

/// Gradients aligned with [`DenoiserParams`] blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub blocks: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        Self {
            blocks: params
                .blocks
                .iter()
                .map(|b| vec![0.0; b.value.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.blocks.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl DenoiserParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let blocks = config
            .layout()
            .into_iter()
            .map(|(name, dims)| ParamBlock {
                value: vec![0.0; dims.iter().product()],
                name,
                dims,
                frozen: false,
            })
            .collect();
        Ok(Self {
            config,
            blocks,
            generation: 0,
        })
    }

    /// Fan-in-scaled uniform weights, zero biases, zero output conv (the
    /// untrained model predicts `e0_hat = 0`, i.e. returns LRMS). Values are
    /// rounded to f32 so the in-memory model equals its checkpoint.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        Self::fill(config, seed, |name| {
            !(name.ends_with(".bias") || name == "out.weight")
        })
    }

    /// Every block, biases and output layer included, drawn from the fan-in
    /// uniform. Useful where a non-degenerate network is needed, e.g.
    /// gradient checks.
    pub fn randomized(config: NetConfig, seed: u64) -> Result<Self> {
        Self::fill(config, seed, |_| true)
    }

    fn fill(config: NetConfig, seed: u64, pick: impl Fn(&str) -> bool) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = SeededGaussian::new(seed);
        for b in &mut p.blocks {
            if !pick(&b.name) {
                continue;
            }
            let fan_in: usize = if b.dims.len() > 1 {
                b.dims[1..].iter().product()
            } else {
                b.dims[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut b.value {
                *v = rng.uniform_range(-bound, bound) as f32 as f64;
            }
        }
        Ok(p)
    }

    pub(crate) fn from_blocks(config: NetConfig, blocks: Vec<ParamBlock>) -> Result<Self> {
        let layout = config.layout();
        if layout.len() != blocks.len()
            || layout.iter().zip(&blocks).any(|((n, d), b)| {
                *n != b.name || *d != b.dims || b.value.len() != d.iter().product::<usize>()
            })
        {
            return Err(Error::Model(
                "parameter blocks do not match the network layout".into(),
            ));
        }
        Ok(Self {
            config,
            blocks,
            generation: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        self.generation += 1;
        &mut self.blocks
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let i = self
            .block_index(name)
            .ok_or_else(|| Error::Model(format!("no parameter block {name:?}")))?;
        self.blocks[i].frozen = frozen;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.value.iter().all(|v| v.is_finite()))
    }

    fn w(&self, i: usize) -> &[f64] {
        &self.blocks[i].value
    }

    fn cond_index(&self) -> Option<usize> {
        (!self.config.sci).then(|| FIRST_BLOCK + 2 * self.config.blocks)
    }

    fn out_index(&self) -> usize {
        self.blocks.len() - 2
    }
}

/// Sinusoidal embedding of `t / steps`: `pos = 1000 t / steps`,
/// `[sin(pos w_i), cos(pos w_i)]` with `w_i = 10000^(-i / half)`.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let pos = 1000.0 * t as f64 / steps.max(1) as f64;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    height: usize,
    width: usize,
    emb: Vec<f64>,
    scale: Vec<f64>,
    col0: Vec<f64>,
    z0: Vec<f64>,
    m0: Vec<f64>,
    block_cols: Vec<Vec<f64>>,
    block_z: Vec<Vec<f64>>,
    cond_col: Option<Vec<f64>>,
    out_col: Vec<f64>,
}

fn widen(t: &ImageTensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Runs the network. Returns `e0_hat` as `bands x (H * W)` f64 plus the cache.
pub fn forward(
    params: &DenoiserParams,
    x_t: &ImageTensor,
    cond: &ConditionSet,
    t: usize,
    steps: usize,
) -> Result<(Vec<f64>, ForwardCache)> {
    let cfg = &params.config;
    let (c, h, w) = x_t.shape();
    if c != cfg.bands {
        return Err(Error::Shape {
            op: "denoiser forward",
            expected: (cfg.bands, h, w),
            got: x_t.shape(),
        });
    }
    x_t.check_same(&cond.lrms, "denoiser forward")?;
    let hw = h * w;
    let hid = cfg.hidden;

    let mut input = match cfg.input {
        InputMode::Latent => widen(x_t),
        InputMode::Residual => x_t
            .data()
            .iter()
            .zip(cond.lrms.data())
            .map(|(&x, &l)| x as f64 - l as f64)
            .collect(),
    };
    let cond_in = widen(cond.stack());
    if cfg.sci {
        input.extend_from_slice(&cond_in);
    }

    let (z0, col0) = conv_forward(
        &input,
        cfg.shallow_in(),
        h,
        w,
        params.w(SHALLOW_W),
        params.w(SHALLOW_B),
        hid,
    );

    let emb = time_embedding(t, steps, cfg.embed_dim);
    let project = |wi: usize, bi: usize| -> Vec<f64> {
        let (wm, b) = (params.w(wi), params.w(bi));
        (0..hid)
            .map(|o| {
                b[o] + wm[o * cfg.embed_dim..(o + 1) * cfg.embed_dim]
                    .iter()
                    .zip(&emb)
                    .map(|(a, e)| a * e)
                    .sum::<f64>()
            })
            .collect()
    };
    let scale = project(SCALE_W, SCALE_B);
    let shift = project(SHIFT_W, SHIFT_B);

    let mut m0 = z0.clone();
    for o in 0..hid {
        for v in &mut m0[o * hw..(o + 1) * hw] {
            *v = *v * (1.0 + scale[o]) + shift[o];
        }
    }
    let mut act: Vec<f64> = m0.iter().map(|&v| silu(v)).collect();

    let mut cond_col = None;
    let mut block_cols = Vec::with_capacity(cfg.blocks);
    let mut block_z = Vec::with_capacity(cfg.blocks);
    for k in 0..cfg.blocks {
        let wi = FIRST_BLOCK + 2 * k;
        let (mut z, col) = conv_forward(&act, hid, h, w, params.w(wi), params.w(wi + 1), hid);
        if k == 0 {
            if let Some(ci) = params.cond_index() {
                let (zc, colc) = conv_forward(
                    &cond_in,
                    cfg.cond_channels(),
                    h,
                    w,
                    params.w(ci),
                    params.w(ci + 1),
                    hid,
                );
                z.iter_mut().zip(&zc).for_each(|(a, b)| *a += b);
                cond_col = Some(colc);
            }
        }
        act.iter_mut().zip(&z).for_each(|(a, &zv)| *a += silu(zv));
        block_cols.push(col);
        block_z.push(z);
    }

    let oi = params.out_index();
    let (out, out_col) = conv_forward(&act, hid, h, w, params.w(oi), params.w(oi + 1), cfg.bands);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite network output".into()));
    }
    Ok((
        out,
        ForwardCache {
            generation: params.generation,
            height: h,
            width: w,
            emb,
            scale,
            col0,
            z0,
            m0,
            block_cols,
            block_z,
            cond_col,
            out_col,
        },
    ))
}

/// Gradients of every parameter block given `d_out = dLoss/d(e0_hat)`.
/// Frozen blocks receive exact zeros.
pub fn backward(params: &DenoiserParams, cache: &ForwardCache, d_out: &[f64]) -> Result<Grads> {
    if cache.generation != params.generation {
        return Err(Error::Model(
            "stale forward cache: parameters changed since forward".into(),
        ));
    }
    let cfg = &params.config;
    let (h, w) = (cache.height, cache.width);
    let hw = h * w;
    let hid = cfg.hidden;
    if d_out.len() != cfg.bands * hw {
        return Err(Error::Model(format!(
            "output gradient has {} entries, expected {}",
            d_out.len(),
            cfg.bands * hw
        )));
    }
    let mut g = Grads::zeros_like(params);

    let oi = params.out_index();
    let (gw, rest) = g.blocks.split_at_mut(oi + 1);
    let mut d_act = conv_backward(
        d_out,
        &cache.out_col,
        params.w(oi),
        hid,
        cfg.bands,
        h,
        w,
        &mut gw[oi],
        &mut rest[0],
        true,
    )
    .expect("input gradient requested");

    for k in (0..cfg.blocks).rev() {
        let wi = FIRST_BLOCK + 2 * k;
        let dz: Vec<f64> = d_act
            .iter()
            .zip(&cache.block_z[k])
            .map(|(&d, &z)| d * silu_grad(z))
            .collect();
        if k == 0 {
            if let (Some(ci), Some(colc)) = (params.cond_index(), &cache.cond_col) {
                let (a, b) = g.blocks.split_at_mut(ci + 1);
                conv_backward(
                    &dz,
                    colc,
                    params.w(ci),
                    cfg.cond_channels(),
                    hid,
                    h,
                    w,
                    &mut a[ci],
                    &mut b[0],
                    false,
                );
            }
        }
        let (a, b) = g.blocks.split_at_mut(wi + 1);
        let d_in = conv_backward(
            &dz,
            &cache.block_cols[k],
            params.w(wi),
            hid,
            hid,
            h,
            w,
            &mut a[wi],
            &mut b[0],
            true,
        )
        .expect("input gradient requested");
        // Residual connection: d_act flows through unchanged plus the conv path.
        d_act.iter_mut().zip(&d_in).for_each(|(a, b)| *a += b);
    }

    let mut dz0 = vec![0.0; hid * hw];
    let mut d_scale = vec![0.0; hid];
    let mut d_shift = vec![0.0; hid];
    for o in 0..hid {
        let range = o * hw..(o + 1) * hw;
        for i in range {
            let dm = d_act[i] * silu_grad(cache.m0[i]);
            d_shift[o] += dm;
            d_scale[o] += dm * cache.z0[i];
            dz0[i] = dm * (1.0 + cache.scale[o]);
        }
    }
    let e = cfg.embed_dim;
    for (wi, bi, d) in [(SCALE_W, SCALE_B, &d_scale), (SHIFT_W, SHIFT_B, &d_shift)] {
        for o in 0..hid {
            for j in 0..e {
                g.blocks[wi][o * e + j] += d[o] * cache.emb[j];
            }
            g.blocks[bi][o] += d[o];
        }
    }
    let (a, b) = g.blocks.split_at_mut(SHALLOW_B);
    conv_backward(
        &dz0,
        &cache.col0,
        params.w(SHALLOW_W),
        cfg.shallow_in(),
        hid,
        h,
        w,
        &mut a[SHALLOW_W],
        &mut b[0],
        false,
    );

    for (gb, pb) in g.blocks.iter_mut().zip(&params.blocks) {
        if pb.frozen {
            gb.fill(0.0);
        }
    }
    Ok(g)
}

/// A parameter set used as a sampler predictor.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub params: DenoiserParams,
}

impl Predictor for Denoiser {
    fn predict(
        &self,
        x_t: &ImageTensor,
        cond: &ConditionSet,
        t: usize,
        steps: usize,
    ) -> Result<ImageTensor> {
        let (out, _) = forward(&self.params, x_t, cond, t, steps)?;
        Ok(ImageTensor::from_f64(x_t.shape(), out))
    }
}

/// Returns the true residual `x_0 - x_T` whatever the state or step.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    residual: ImageTensor,
}

/// Oracle built from ground truth; `cond.lrms` must equal the `x_T` used here.
pub fn oracle_predictor(x0: &ImageTensor, lrms: &ImageTensor) -> Result<OraclePredictor> {
    Ok(OraclePredictor {
        residual: x0.sub(lrms)?,
    })
}

impl Predictor for OraclePredictor {
    fn predict(
        &self,
        x_t: &ImageTensor,
        _: &ConditionSet,
        _: usize,
        _: usize,
    ) -> Result<ImageTensor> {
        x_t.check_same(&self.residual, "oracle predictor")?;
        Ok(self.residual.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_field;

    fn inputs(bands: usize, size: usize, seed: u64) -> (ImageTensor, ConditionSet) {
        let mut g = SeededGaussian::new(seed);
        let x = gaussian_field(&mut g, (bands, size, size), 0.5, 0.2).unwrap();
        let l = gaussian_field(&mut g, (bands, size, size), 0.5, 0.2).unwrap();
        let p = gaussian_field(&mut g, (1, size, size), 0.5, 0.2).unwrap();
        (x, ConditionSet::build(&l, &p).unwrap())
    }

    #[test]
    fn param_count_from_config() {
        let cfg = NetConfig::new(4);
        let hid = 32;
        let expect =
            hid * 29 * 9 + hid + 2 * (hid * 32 + hid) + 3 * (hid * hid * 9 + hid) + 4 * hid * 9 + 4;
        assert_eq!(cfg.param_count(), expect);
        assert_eq!(
            DenoiserParams::randomized(cfg, 0).unwrap().param_count(),
            expect
        );
        let no_sci = NetConfig { sci: false, ..cfg };
        assert_eq!(
            no_sci.param_count(),
            expect - hid * 25 * 9 + hid * 25 * 9 + hid
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = DenoiserParams::zeros(NetConfig::new(2)).unwrap();
        let (x, c) = inputs(2, 6, 1);
        let (out, _) = forward(&p, &x, &c, 3, 15).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_function() {
        let p = DenoiserParams::randomized(NetConfig::new(2), 5).unwrap();
        let (x, c) = inputs(2, 6, 1);
        assert_eq!(
            forward(&p, &x, &c, 3, 15).unwrap().0,
            forward(&p, &x, &c, 3, 15).unwrap().0
        );
    }

    #[test]
    fn output_layer_is_linear() {
        let mut p = DenoiserParams::randomized(NetConfig::new(2), 5).unwrap();
        let bi = p.block_index("out.bias").unwrap();
        p.blocks_mut()[bi].value.iter_mut().for_each(|v| *v = 0.0);
        let (x, c) = inputs(2, 6, 2);
        let (a, _) = forward(&p, &x, &c, 7, 15).unwrap();
        let oi = p.block_index("out.weight").unwrap();
        p.blocks_mut()[oi].value.iter_mut().for_each(|v| *v *= 2.0);
        let (b, _) = forward(&p, &x, &c, 7, 15).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = DenoiserParams::randomized(NetConfig::new(2), 5).unwrap();
        let (x, c) = inputs(2, 6, 3);
        let (out, cache) = forward(&p, &x, &c, 2, 15).unwrap();
        let g = backward(&p, &cache, &vec![0.0; out.len()]).unwrap();
        assert!(g.blocks.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_block_gets_zero() {
        let mut p = DenoiserParams::randomized(NetConfig::new(2), 5).unwrap();
        p.set_frozen("block1.weight", true).unwrap();
        let (x, c) = inputs(2, 6, 3);
        let (out, cache) = forward(&p, &x, &c, 2, 15).unwrap();
        let g = backward(&p, &cache, &vec![1.0; out.len()]).unwrap();
        let i = p.block_index("block1.weight").unwrap();
        assert!(g.blocks[i].iter().all(|&v| v == 0.0));
        assert!(g.blocks[i - 2].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = DenoiserParams::randomized(NetConfig::new(2), 5).unwrap();
        let (x, c) = inputs(2, 6, 3);
        let (out, cache) = forward(&p, &x, &c, 2, 15).unwrap();
        p.blocks_mut();
        assert!(backward(&p, &cache, &vec![1.0; out.len()]).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let p = DenoiserParams::randomized(NetConfig::new(3), 5).unwrap();
        let (x, c) = inputs(2, 6, 3);
        assert!(forward(&p, &x, &c, 2, 15).is_err());
    }

    #[test]
    fn oracle_ignores_state_and_step() {
        let (x0, c) = inputs(2, 4, 9);
        let o = oracle_predictor(&x0, &c.lrms).unwrap();
        let a = o.predict(&x0, &c, 1, 15).unwrap();
        let b = o.predict(&c.lrms, &c, 15, 15).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, x0.sub(&c.lrms).unwrap());
    }
}
