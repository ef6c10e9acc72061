//! The attentional encoder-decoder: multilingual training with either
//! embedding path, greedy/beam translation, checkpointing, fine-tuning.

pub mod checkpoint;
pub mod model;
pub mod train;
pub mod translate;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use model::{
    AttentionKind, ModelConfig, SourceProvider, TranslationModel, UlrLang,
};
pub use train::{fine_tune, train_step, EpochMetrics, StepStats, TrainLogEntry, TrainingConfig};
pub use translate::{translate, DecodeMode, Translation};
