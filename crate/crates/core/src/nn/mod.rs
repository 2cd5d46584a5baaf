//! Hand-written convolutional residual predictor, its optimizer, checkpoint
//! format and training loop.

pub mod checkpoint;
pub mod conv;
pub mod model;
pub mod optim;
pub mod train;

pub use model::{
    backward, forward, oracle_predictor, Denoiser, DenoiserParams, ForwardCache, Grads, InputMode,
    NetConfig, OraclePredictor, ParamBlock,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{
    baseline_score, prepare, train, train_from_dir, validate, EpochLog, TrainConfig, TrainFiles,
    TrainOutcome, ValidationScore,
};
