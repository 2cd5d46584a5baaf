//! Residual diffusion for multispectral image fusion.
//!
//! A short Markov chain over the residual `e = HRMS - LRMS` is sampled in
//! reverse from noise, guided by a predictor that sees the latent state
//! `x_t = e_t + LRMS` together with PAN, LRMS and their Haar components.
//! Adding the final residual back onto LRMS gives the fused image.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`tensor`], [`rng`], [`mbif`] | rasters, seeded normals, the MBIF file format |
//! | [`schedule`] | cosine `alpha` / `alpha_bar` table |
//! | [`chain`] | forward, marginal and posterior sampling; training draws; the sampler |
//! | [`wavelet`] | one-level Haar analysis and the condition stack |
//! | [`loss`] | residual loss, range penalty, L1/L2 baselines |
//! | [`nn`] | conv predictor with manual backprop, AdamW, RPDC checkpoints, training |
//! | [`metrics`] | SAM, ERGAS, SCC, PSNR |
//! | [`datagen`] | synthetic degrade-and-upsample scenes |
//! | [`trajectory`] | 2D toy transport and straightness statistics |
//! | [`verify`] | executable property suite behind `respan verify` |

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod loss;
pub mod mbif;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod trajectory;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};
pub use rng::SeededGaussian;
pub use schedule::{build_schedule, ScheduleConfig, ScheduleTable};
pub use tensor::ImageTensor;
pub use wavelet::ConditionSet;
