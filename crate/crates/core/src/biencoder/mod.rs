//! Contrastive training of linear projection heads over frozen image and
//! caption embeddings, and the retrieval stage built on them.
//!
//! The heads start as (truncated) identities, so an untrained pair reproduces
//! plain cosine search over the frozen embeddings.

mod batch;
mod head;
mod loss;
mod train;

pub use batch::{batch_split, build_batch, check_batch, random_pool, ImageSampler, PairKind, TrainBatch, TrainPair};
pub use head::{HeadPair, ProjectionHead, HEAD_MAGIC, HEAD_VERSION};
pub use loss::{info_nce_loss, InfoNce};
pub use train::{
    batch_seed, dev_recall, log_to_jsonl, retrieve_event_candidates, train_biencoder, BiEncoder, BiEncoderConfig,
    EpochLog, TrainOutcome, TrainingData,
};
