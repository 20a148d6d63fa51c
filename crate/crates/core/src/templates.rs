//! Text templates fed to the cross-scorers, and how their embeddings are found.
//!
//! Template vectors come from the same frozen text encoder as captions. They
//! are cached in an ordinary embedding matrix whose row ids are
//! [`template_id`]s, so a cache file is produced by embedding a manifest of
//! template texts.

use std::collections::BTreeMap;

use xxhash_rust::xxh3::xxh3_64;

use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Content-derived row id of a template text.
pub fn template_id(text: &str) -> String {
    format!("tpl:{:016x}", xxh3_64(text.as_bytes()))
}

pub trait TemplateEncoder: Sync {
    fn dim(&self) -> usize;

    /// Unit-norm embedding of `text`.
    fn encode(&self, text: &str) -> Result<Vec<f32>>;
}

/// Template embeddings looked up in a precomputed matrix.
#[derive(Debug, Clone)]
pub struct TemplateCache {
    matrix: EmbeddingMatrix,
}

impl TemplateCache {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        TemplateCache { matrix }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }
}

impl TemplateEncoder for TemplateCache {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>> {
        self.matrix
            .get(&template_id(text))
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::Lookup {
                kind: "template embedding",
                id: text.to_string(),
            })
    }
}

/// `template_id → text` for every template in `texts`, deduplicated and in id
/// order (the input of an embedding manifest).
pub fn template_manifest<'a>(texts: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, String> {
    texts
        .into_iter()
        .map(|t| (template_id(t), t.to_string()))
        .collect()
}
