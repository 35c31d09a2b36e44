//! Contrastive multimodal model: loss, training, inference-time fusion and
//! the ECL coherence diagnostic.

mod ecl;
mod fusion;
mod loss;
mod model;
pub(crate) mod train;

pub use ecl::{ecl, EclIndex};
pub use fusion::{average_modalities, encode_dataset, fuse, fuse_all, FusedTable, FusionMode};
pub use loss::{default_pairs, pairwise_infonce, total_loss, total_loss_graph, PairwiseInfoNce};
pub use model::{Checkpoint, ContrastiveModel, EncoderCheckpoint, DEFAULT_TEMPERATURE};
pub use train::{
    batch_loss, format_loss_log, gather_rows, train, train_model, EpochLoss, TrainConfig,
    TrainOutcome,
};
