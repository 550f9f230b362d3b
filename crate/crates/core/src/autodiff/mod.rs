//! Minimal reverse-mode automatic differentiation: dense matrices, sparse
//! neighbour aggregation, and the optimiser, schedule, and loss pieces the
//! training loop needs.

pub mod check;
mod loss;
mod matrix;
mod norm;
mod optim;
mod real;
mod tape;

pub use loss::{compute_class_weights, ClassWeights, PUBLISHED_LICIT_WEIGHT};
pub(crate) use matrix::gemm_nt;
pub use matrix::Matrix;
pub use norm::{
    batch_norm, bn_relu_dropout, dropout, dropout_mask, BnRecorder, BnUpdate, BnUpdateLog, Mode,
    NodeSetDigest, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use optim::{
    adamw_step, clip_global_norm, cosine_lr, global_norm, AdamWConfig, OptimizerState,
};
pub use real::Real;
pub use tape::{softmax_into, AttentionConfig, BatchMoments, Gradients, NormSource, Tape, Var};

#[cfg(test)]
mod tests;
