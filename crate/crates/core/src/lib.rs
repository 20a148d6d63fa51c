//! Retrieval engine that links a news image to articles about the same event
//! and place, and scores the dates and locations those articles imply.
//!
//! Stages, in query order:
//!
//! 1. [`embedstore`]: exact top-K cosine search over article caption vectors.
//! 2. [`biencoder`]: trainable linear heads over frozen image/text embeddings.
//! 3. [`rerank_loc`]: location cross-scorer; its ranking is the location output.
//! 4. [`cluster_event`]: per-query event clusters reranked by the event scorer;
//!    its ranking is the date output.
//!
//! [`pipeline`] wires the stages together and [`metrics`] evaluates them.

mod binio;

pub mod article;
pub mod biencoder;
pub mod cluster_event;
pub mod config;
pub mod date;
pub mod embedstore;
pub mod error;
pub mod labeling;
pub mod manifest;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod rerank_loc;
pub mod synthetic;
pub mod templates;
pub mod text;
pub mod xenc;

pub use error::{Error, Result};
pub use par::Execution;
