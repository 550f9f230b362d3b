//! Encoder architectures, the shared training loop, embedding extraction
//! and probability fusion.

mod checkpoint;
mod embed;
mod forward;
mod spec;
mod train;

pub use checkpoint::{
    checkpoint_from_store, checkpoint_to_store, load_checkpoint, save_checkpoint,
};
pub use embed::{extract_embeddings, fuse_probabilities, DEFAULT_FUSION_ALPHA, EMBEDDING_DIM};
pub use forward::{argmax_classes, illicit_probabilities, infer, predicts_illicit, Inference};
pub use spec::{Init, ModelKind, ModelSpec, ParamSlot, Params};
pub use train::{
    train, EarlyStopSplit, EpochRecord, LossKind, Precision, TrainConfig, TrainData, TrainedModel,
    TRAIN_TAIL_FIRST_STEP,
};

#[cfg(test)]
mod tests;
