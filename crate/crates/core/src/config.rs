//! Run configuration: one flat TOML table with units in key names.
//!
//! Unknown keys are rejected (the error names the key). Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::biencoder::BiEncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{DateThresholds, DateWeights, InverseForm, MetricsConfig};
use crate::xenc::{Combiner, XencTrainConfig};

/// Which article text feeds the caption index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexField {
    /// Generated news captions, one row per caption.
    #[default]
    Caption,
    /// The article abstract, one row per article.
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    pub k_loc: usize,
    pub k_evt: usize,
    pub n_window_days: u32,
    pub n_min_size: usize,
    pub min_clusters: usize,
    pub n_negative: usize,
    pub n_random: f64,
    pub temperature: f64,
    pub index_field: IndexField,

    pub bi_epochs: usize,
    pub bi_learning_rate: f64,
    pub bi_batch_size: usize,
    pub bi_momentum: f64,
    pub bi_weight_decay: f64,
    /// 0 keeps the text embedding width.
    pub bi_dim_out: usize,
    pub bi_eval_k: usize,

    pub loc_epochs: usize,
    pub loc_learning_rate: f64,
    pub loc_weight_decay: f64,
    pub loc_batch_size: usize,
    pub loc_combiners: Vec<Combiner>,

    pub evt_epochs: usize,
    pub evt_learning_rate: f64,
    pub evt_weight_decay: f64,
    pub evt_batch_size: usize,
    pub evt_combiners: Vec<Combiner>,

    pub great_decade_threshold_decades: f64,
    pub great_year_threshold_years: f64,
    pub great_month_threshold_months: f64,
    pub great_day_threshold_days: f64,
    pub great_century_weight: f64,
    pub great_decade_weight: f64,
    pub great_year_weight: f64,
    pub great_month_weight: f64,
    pub great_day_weight: f64,
    pub great_date_weight: f64,
    pub great_loc_weight: f64,
    pub delta_form: InverseForm,
    pub co_delta_form: InverseForm,

    pub prompt_top_n: usize,

    pub corpus_path: Option<PathBuf>,
    pub variant_path: Option<PathBuf>,
    pub images_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub image_embeddings_path: Option<PathBuf>,
    /// Each article's own photo, keyed by article id; feeds the random pairs of a batch.
    pub article_image_embeddings_path: Option<PathBuf>,
    pub caption_embeddings_path: Option<PathBuf>,
    pub template_embeddings_path: Option<PathBuf>,
    pub gazetteer_path: Option<PathBuf>,
    pub heads_path: Option<PathBuf>,
    pub loc_scorer_path: Option<PathBuf>,
    pub evt_scorer_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let m = MetricsConfig::default();
        Config {
            seed: 0,
            k_loc: 20,
            k_evt: 50,
            n_window_days: 7,
            n_min_size: 3,
            min_clusters: 2,
            n_negative: 4,
            n_random: 0.5,
            temperature: 0.07,
            index_field: IndexField::Caption,
            bi_epochs: 10,
            bi_learning_rate: 3e-5,
            bi_batch_size: 256,
            bi_momentum: 0.0,
            bi_weight_decay: 0.0,
            bi_dim_out: 0,
            bi_eval_k: 100,
            loc_epochs: 5,
            loc_learning_rate: 1e-3,
            loc_weight_decay: 1e-3,
            loc_batch_size: 128,
            loc_combiners: vec![Combiner::Concatenation],
            evt_epochs: 15,
            evt_learning_rate: 1e-3,
            evt_weight_decay: 1e-5,
            evt_batch_size: 128,
            evt_combiners: vec![Combiner::Concatenation, Combiner::Multiplication, Combiner::Difference],
            great_decade_threshold_decades: m.thresholds.decade,
            great_year_threshold_years: m.thresholds.year,
            great_month_threshold_months: m.thresholds.month,
            great_day_threshold_days: m.thresholds.day,
            great_century_weight: m.date_weights.century,
            great_decade_weight: m.date_weights.decade,
            great_year_weight: m.date_weights.year,
            great_month_weight: m.date_weights.month,
            great_day_weight: m.date_weights.day,
            great_date_weight: m.great_date_weight,
            great_loc_weight: m.great_loc_weight,
            delta_form: m.delta_form,
            co_delta_form: m.co_delta_form,
            prompt_top_n: 3,
            corpus_path: None,
            variant_path: None,
            images_path: None,
            labels_path: None,
            image_embeddings_path: None,
            article_image_embeddings_path: None,
            caption_embeddings_path: None,
            template_embeddings_path: None,
            gazetteer_path: None,
            heads_path: None,
            loc_scorer_path: None,
            evt_scorer_path: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus_path,
            &mut self.variant_path,
            &mut self.images_path,
            &mut self.labels_path,
            &mut self.image_embeddings_path,
            &mut self.article_image_embeddings_path,
            &mut self.caption_embeddings_path,
            &mut self.template_embeddings_path,
            &mut self.gazetteer_path,
            &mut self.heads_path,
            &mut self.loc_scorer_path,
            &mut self.evt_scorer_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_loc", self.k_loc),
            ("k_evt", self.k_evt),
            ("n_min_size", self.n_min_size),
            ("bi_batch_size", self.bi_batch_size),
            ("bi_eval_k", self.bi_eval_k),
            ("loc_batch_size", self.loc_batch_size),
            ("evt_batch_size", self.evt_batch_size),
            ("prompt_top_n", self.prompt_top_n),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        for (key, c) in [("loc_combiners", &self.loc_combiners), ("evt_combiners", &self.evt_combiners)] {
            let mut sorted = c.clone();
            sorted.sort();
            sorted.dedup();
            if c.is_empty() || sorted.len() != c.len() {
                return Err(Error::Config(format!("{key} must be a non-empty list without repeats")));
            }
        }
        let prefixed = |key: &str, e: Error| match e {
            Error::Config(m) | Error::InvalidArgument(m) => Error::Config(format!("{key}: {m}")),
            other => other,
        };
        self.biencoder().validate().map_err(|e| prefixed("bi_*", e))?;
        self.loc_training().validate().map_err(|e| prefixed("loc_*", e))?;
        self.evt_training().validate().map_err(|e| prefixed("evt_*", e))?;
        self.metrics().validate().map_err(|e| prefixed("great_*", e))
    }

    pub fn biencoder(&self) -> BiEncoderConfig {
        BiEncoderConfig {
            epochs: self.bi_epochs,
            learning_rate: self.bi_learning_rate,
            batch_size: self.bi_batch_size,
            n_random: self.n_random,
            temperature: self.temperature,
            momentum: self.bi_momentum,
            weight_decay: self.bi_weight_decay,
            dim_out: (self.bi_dim_out > 0).then_some(self.bi_dim_out),
            eval_k: self.bi_eval_k,
            seed: self.seed,
        }
    }

    pub fn loc_training(&self) -> XencTrainConfig {
        XencTrainConfig {
            epochs: self.loc_epochs,
            learning_rate: self.loc_learning_rate,
            weight_decay: self.loc_weight_decay,
            batch_size: self.loc_batch_size,
            n_negative: self.n_negative,
            seed: self.seed ^ 0x6c6f63,
        }
    }

    pub fn evt_training(&self) -> XencTrainConfig {
        XencTrainConfig {
            epochs: self.evt_epochs,
            learning_rate: self.evt_learning_rate,
            weight_decay: self.evt_weight_decay,
            batch_size: self.evt_batch_size,
            n_negative: self.n_negative,
            seed: self.seed ^ 0x657674,
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            thresholds: DateThresholds {
                decade: self.great_decade_threshold_decades,
                year: self.great_year_threshold_years,
                month: self.great_month_threshold_months,
                day: self.great_day_threshold_days,
            },
            date_weights: DateWeights {
                century: self.great_century_weight,
                decade: self.great_decade_weight,
                year: self.great_year_weight,
                month: self.great_month_weight,
                day: self.great_day_weight,
            },
            great_date_weight: self.great_date_weight,
            great_loc_weight: self.great_loc_weight,
            delta_form: self.delta_form,
            co_delta_form: self.co_delta_form,
        }
    }

    /// Hash stamped into head checkpoints: every setting that shapes them.
    pub fn biencoder_hash(&self) -> u64 {
        hash_json(&serde_json::json!({
            "bi": self.biencoder(),
            "n_window_days": self.n_window_days,
            "index_field": self.index_field,
        }))
    }

    /// Location scorer hash; chains the head hash since training uses its hits.
    pub fn loc_scorer_hash(&self) -> u64 {
        hash_json(&serde_json::json!({
            "heads": self.biencoder_hash(),
            "k_loc": self.k_loc,
            "train": self.loc_training(),
            "combiners": self.loc_combiners,
        }))
    }

    pub fn evt_scorer_hash(&self) -> u64 {
        hash_json(&serde_json::json!({
            "heads": self.biencoder_hash(),
            "k_evt": self.k_evt,
            "n_min_size": self.n_min_size,
            "min_clusters": self.min_clusters,
            "train": self.evt_training(),
            "combiners": self.evt_combiners,
        }))
    }

    pub fn require_path<'a>(&'a self, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("{key} is not set")))
    }
}

fn hash_json(v: &serde_json::Value) -> u64 {
    xxh3_64(v.to_string().as_bytes())
}
