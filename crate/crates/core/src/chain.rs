//! The residual Markov chain.
//!
//! The chain runs over residuals `e = x_0 - x_T` (HRMS minus upsampled LRMS):
//!
//! * one forward step: `q(e_t | e_{t-1}, e_0) = N(e_{t-1} - alpha_t e_0, kappa^2 alpha_t)`
//! * marginal: `q(e_t | e_0) = N((1 - alpha_bar_t) e_0, kappa^2 alpha_bar_t)`
//! * posterior: `q(e_{t-1} | e_t, e_0) = N((abar_{t-1}/abar_t) e_t + (alpha_t/abar_t) e_0,
//!   kappa^2 (abar_{t-1}/abar_t) alpha_t)`
//!
//! The predictor always sees the latent state `x_t = e_t + x_T`.

use crate::error::{Error, Result};
use crate::rng::SeededGaussian;
use crate::schedule::ScheduleTable;
use crate::tensor::ImageTensor;
use crate::wavelet::ConditionSet;

/// A stream of standard-normal draws.
pub trait NoiseSource {
    fn normal(&mut self) -> f64;
}

impl NoiseSource for SeededGaussian {
    fn normal(&mut self) -> f64 {
        SeededGaussian::normal(self)
    }
}

/// Always returns 0; turns every stochastic step into its mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self) -> f64 {
        0.0
    }
}

/// Anything that estimates `e_0` from the latent state.
pub trait Predictor {
    /// Returns `e0_hat` with the shape of `x_t`. `t` runs from `steps` down to 1.
    fn predict(
        &self,
        x_t: &ImageTensor,
        cond: &ConditionSet,
        t: usize,
        steps: usize,
    ) -> Result<ImageTensor>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(
        &self,
        x_t: &ImageTensor,
        cond: &ConditionSet,
        t: usize,
        steps: usize,
    ) -> Result<ImageTensor> {
        (**self).predict(x_t, cond, t, steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub t: usize,
    pub e_t: ImageTensor,
    pub x_t: ImageTensor,
}

impl ChainState {
    pub fn new(t: usize, e_t: ImageTensor, lrms: &ImageTensor) -> Result<Self> {
        let x_t = e_t.add(lrms)?;
        Ok(Self { t, e_t, x_t })
    }
}

/// Posterior weights: `mean = w_et * e_t + w_e0 * e0`, `std` as stated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub w_et: f64,
    pub w_e0: f64,
    pub std: f64,
}

impl PosteriorCoeffs {
    pub fn mean(&self, e_t: f64, e0: f64) -> f64 {
        self.w_et * e_t + self.w_e0 * e0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: ImageTensor,
    pub std: f64,
}

pub fn posterior_coeffs(tab: &ScheduleTable, t: usize) -> Result<PosteriorCoeffs> {
    tab.check_step("chain", t, 1)?;
    let abar = tab.alpha_bar(t);
    let abar_prev = tab.alpha_bar(t - 1);
    let alpha = tab.alpha(t);
    if !(abar > 0.0) {
        return Err(Error::config("chain", format!("alpha_bar[{t}] = {abar}")));
    }
    let ratio = abar_prev / abar;
    Ok(PosteriorCoeffs {
        w_et: ratio,
        w_e0: alpha / abar,
        std: tab.kappa() * (ratio * alpha).sqrt(),
    })
}

/// Scalar form of one forward transition.
pub fn forward_step_scalar(
    e_prev: f64,
    e0: f64,
    t: usize,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    tab.check_step("chain", t, 1)?;
    let alpha = tab.alpha(t);
    Ok(e_prev - alpha * e0 + tab.kappa() * alpha.sqrt() * noise.normal())
}

/// Scalar form of the closed-form marginal draw.
pub fn forward_marginal_scalar(
    e0: f64,
    t: usize,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    let m = tab.marginal_params(t)?;
    Ok(m.coeff * e0 + m.std * noise.normal())
}

pub fn forward_step(
    e_prev: &ImageTensor,
    e0: &ImageTensor,
    t: usize,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<ImageTensor> {
    e_prev.check_same(e0, "forward_step")?;
    tab.check_step("chain", t, 1)?;
    let alpha = tab.alpha(t);
    let std = tab.kappa() * alpha.sqrt();
    let vals = e_prev
        .data()
        .iter()
        .zip(e0.data())
        .map(|(&p, &z)| p as f64 - alpha * z as f64 + std * noise.normal());
    Ok(ImageTensor::from_f64(e0.shape(), vals))
}

pub fn forward_marginal(
    e0: &ImageTensor,
    t: usize,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<ImageTensor> {
    let m = tab.marginal_params(t)?;
    let vals = e0
        .data()
        .iter()
        .map(|&z| m.coeff * z as f64 + m.std * noise.normal());
    Ok(ImageTensor::from_f64(e0.shape(), vals))
}

/// Mean and std of `q(e_{t-1} | e_t, e0_hat)`. At `t = 1` this is `(e0_hat, 0)`.
pub fn posterior(
    e_t: &ImageTensor,
    e0_hat: &ImageTensor,
    t: usize,
    tab: &ScheduleTable,
) -> Result<PosteriorParams> {
    e_t.check_same(e0_hat, "posterior")?;
    let k = posterior_coeffs(tab, t)?;
    let mean = if t == 1 {
        e0_hat.clone()
    } else {
        ImageTensor::from_f64(
            e_t.shape(),
            e_t.data()
                .iter()
                .zip(e0_hat.data())
                .map(|(&a, &b)| k.mean(a as f64, b as f64)),
        )
    };
    Ok(PosteriorParams { mean, std: k.std })
}

/// One ancestral step `e_{t-1} ~ q(e_{t-1} | e_t, e0_hat)`.
pub fn reverse_step(
    e_t: &ImageTensor,
    e0_hat: &ImageTensor,
    t: usize,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<ImageTensor> {
    let post = posterior(e_t, e0_hat, t, tab)?;
    if post.std == 0.0 {
        return Ok(post.mean);
    }
    let vals = post
        .mean
        .data()
        .iter()
        .map(|&m| m as f64 + post.std * noise.normal());
    Ok(ImageTensor::from_f64(e_t.shape(), vals))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub t: usize,
    pub e0: ImageTensor,
    pub e_t: ImageTensor,
    pub x_t: ImageTensor,
}

/// Draws `t ~ U{1..T}`, `e_t ~ q(e_t | e_0)` and forms `x_t = e_t + x_T`.
pub fn make_training_sample(
    x0: &ImageTensor,
    lrms: &ImageTensor,
    tab: &ScheduleTable,
    rng: &mut SeededGaussian,
) -> Result<TrainingSample> {
    let e0 = x0.sub(lrms)?;
    let t = 1 + rng.below(tab.steps() as u64) as usize;
    let e_t = forward_marginal(&e0, t, tab, rng)?;
    let x_t = e_t.add(lrms)?;
    Ok(TrainingSample { t, e0, e_t, x_t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `clamp(e0_hat + x_T, 0, 1)`.
    pub x0_hat: ImageTensor,
    /// Final residual, unclamped.
    pub e0_hat: ImageTensor,
}

/// Reverse chain from `e_T ~ N(0, kappa^2)` down to `e_0`; exactly `T`
/// predictor calls. The clamp to `[0, 1]` is applied once, at the end.
pub fn sample(
    lrms: &ImageTensor,
    cond: &ConditionSet,
    predictor: &dyn Predictor,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
) -> Result<SampleOutput> {
    sample_traced(lrms, cond, predictor, tab, noise, |_| {})
}

/// As [`sample`], reporting every chain state from `t = T` to `t = 0`.
pub fn sample_traced(
    lrms: &ImageTensor,
    cond: &ConditionSet,
    predictor: &dyn Predictor,
    tab: &ScheduleTable,
    noise: &mut dyn NoiseSource,
    mut observe: impl FnMut(&ChainState),
) -> Result<SampleOutput> {
    let steps = tab.steps();
    let kappa = tab.kappa() * tab.alpha_bar(steps).sqrt();
    let e_start = ImageTensor::from_f64(
        lrms.shape(),
        (0..lrms.len()).map(|_| kappa * noise.normal()),
    );
    let mut state = ChainState::new(steps, e_start, lrms)?;
    observe(&state);
    while state.t >= 1 {
        let e0_hat = predictor.predict(&state.x_t, cond, state.t, steps)?;
        lrms.check_same(&e0_hat, "predictor output")?;
        let e_prev = reverse_step(&state.e_t, &e0_hat, state.t, tab, noise)?;
        state = ChainState::new(state.t - 1, e_prev, lrms)?;
        observe(&state);
    }
    let x0_hat = state.x_t.clamp(0.0, 1.0);
    Ok(SampleOutput {
        x0_hat,
        e0_hat: state.e_t,
    })
}
