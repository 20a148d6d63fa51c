//! End-to-end query pipeline, stage training drivers, evaluation and
//! evidence-prompt rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::article::{Article, Corpus};
use crate::biencoder::{train_biencoder, BiEncoder, HeadPair, TrainOutcome, TrainingData};
use crate::cluster_event::{
    event_group, event_ranking, form_clusters, score_clusters, train_event_scorer, ArticleCluster, ClusterItem,
    EventCase,
};
use crate::config::Config;
use crate::embedstore::{CaptionIndex, EmbeddingMatrix, SearchHit};
use crate::error::{Error, Result};
use crate::labeling::{ImageRecord, LabelStore, Split};
use crate::metrics::{evaluate_query, extract_predictions, Gazetteer, MetricsReport};
use crate::par::Execution;
use crate::rerank_loc::{location_group, rerank_by_location, train_location_scorer, ScoredArticle};
use crate::templates::TemplateEncoder;
use crate::xenc::{CrossScorer, TrainGroup, XencOutcome};

pub const STAGE_BIENCODER: &str = "biencoder";
pub const STAGE_LOCATION: &str = "location-rerank";
pub const STAGE_CLUSTERING: &str = "clustering";
pub const STAGE_EVENT: &str = "event-rerank";

/// Wall-clock milliseconds per stage. Not part of the serialized result, so
/// result files stay byte-reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub biencoder_ms: f64,
    pub location_ms: f64,
    pub clustering_ms: f64,
    pub event_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub image_id: String,
    pub location_ranking: Vec<ScoredArticle>,
    pub event_ranking: Vec<String>,
    pub clusters: Vec<ArticleCluster>,
    /// False when too few clusters formed and the event ranking is the
    /// bi-encoder order.
    pub event_reranked: bool,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl RetrievalResult {
    pub fn location_ids(&self) -> Vec<&str> {
        self.location_ranking.iter().map(|s| s.article_id.as_str()).collect()
    }
}

pub fn results_to_jsonl(results: &[RetrievalResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
        .collect()
}

pub fn results_from_jsonl(text: &str) -> Result<Vec<RetrievalResult>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Trained models needed at query time.
#[derive(Debug, Clone)]
pub struct Models {
    pub heads: HeadPair,
    pub location: CrossScorer,
    pub event: CrossScorer,
}

/// Query-time parameters, copied from the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryParams {
    pub k_loc: usize,
    pub k_evt: usize,
    pub n_window_days: u32,
    pub n_min_size: usize,
    pub min_clusters: usize,
}

impl From<&Config> for QueryParams {
    fn from(c: &Config) -> Self {
        QueryParams {
            k_loc: c.k_loc,
            k_evt: c.k_evt,
            n_window_days: c.n_window_days,
            n_min_size: c.n_min_size,
            min_clusters: c.min_clusters,
        }
    }
}

pub struct Engine<'a> {
    corpus: &'a Corpus,
    images: &'a EmbeddingMatrix,
    templates: &'a dyn TemplateEncoder,
    encoder: BiEncoder,
    location: CrossScorer,
    event: CrossScorer,
    params: QueryParams,
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}

impl<'a> Engine<'a> {
    /// Only captions of articles in `corpus` are searchable, so a corpus
    /// variant applied to `corpus` bounds every ranking.
    pub fn new(
        corpus: &'a Corpus,
        images: &'a EmbeddingMatrix,
        captions: &CaptionIndex,
        templates: &'a dyn TemplateEncoder,
        models: Models,
        params: QueryParams,
        exec: Execution,
    ) -> Result<Self> {
        check_dim(models.heads.image.dim_in(), images.dim())?;
        for s in [&models.location, &models.event] {
            check_dim(s.dim(), images.dim())?;
            check_dim(s.dim(), templates.dim())?;
        }
        let active = captions.restrict(|id| corpus.contains(id));
        let encoder = BiEncoder::new(models.heads, &active, exec)?;
        Ok(Engine {
            corpus,
            images,
            templates,
            encoder,
            location: models.location,
            event: models.event,
            params,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn params(&self) -> QueryParams {
        self.params
    }

    fn image(&self, image_id: &str) -> Result<&'a [f32]> {
        self.images.get(image_id).ok_or_else(|| Error::Lookup {
            kind: "image embedding",
            id: image_id.to_string(),
        })
    }

    /// Bi-encoder top-K, location rerank, clustering, event rerank.
    pub fn run_inference(&self, image_id: &str) -> Result<RetrievalResult> {
        let image = self.image(image_id)?;
        let p = self.params;
        let lookup = |id: &str| self.corpus.get(id);
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let hits = self
            .encoder
            .search(image, p.k_loc.max(p.k_evt))
            .map_err(|e| e.in_stage(STAGE_BIENCODER))?;
        timings.biencoder_ms = ms(t);

        let t = Instant::now();
        let loc_hits = &hits[..hits.len().min(p.k_loc)];
        let location_ranking = rerank_by_location(image, loc_hits, lookup, &self.location, self.templates)
            .map_err(|e| e.in_stage(STAGE_LOCATION))?;
        timings.location_ms = ms(t);

        let t = Instant::now();
        let items = cluster_items(&hits[..hits.len().min(p.k_evt)], lookup).map_err(|e| e.in_stage(STAGE_CLUSTERING))?;
        let mut clustering = form_clusters(&items, p.n_window_days, p.n_min_size);
        timings.clustering_ms = ms(t);

        let t = Instant::now();
        if clustering.clusters.len() >= p.min_clusters {
            score_clusters(image, &mut clustering.clusters, &self.event, self.templates)
                .map_err(|e| e.in_stage(STAGE_EVENT))?;
        }
        let (event_ranking, event_reranked) = event_ranking(&items, &clustering.clusters, p.min_clusters);
        timings.event_ms = ms(t);

        Ok(RetrievalResult {
            image_id: image_id.to_string(),
            location_ranking,
            event_ranking,
            clusters: clustering.clusters,
            event_reranked,
            timings,
        })
    }

    /// Queries are independent; results come back in input order and the
    /// first failure (in input order) is returned.
    pub fn run_batch(&self, image_ids: &[String], exec: Execution) -> Result<Vec<RetrievalResult>>
    where
        Self: Sync,
    {
        exec.map(image_ids.len(), |i| self.run_inference(&image_ids[i]))
            .into_iter()
            .collect()
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cluster_items<'a>(hits: &[SearchHit], lookup: impl Fn(&str) -> Option<&'a Article>) -> Result<Vec<ClusterItem>> {
    hits.iter()
        .map(|h| {
            lookup(&h.article_id)
                .map(|a| ClusterItem::new(a, h.score))
                .ok_or_else(|| Error::Lookup {
                    kind: "article",
                    id: h.article_id.clone(),
                })
        })
        .collect()
}

/// Everything stage training reads.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    pub images: &'a [ImageRecord],
    pub image_embeddings: &'a EmbeddingMatrix,
    pub article_images: Option<&'a EmbeddingMatrix>,
    pub captions: &'a CaptionIndex,
    pub labels: &'a LabelStore,
    pub templates: &'a dyn TemplateEncoder,
}

impl TrainInputs<'_> {
    pub fn split_ids(&self, split: Split) -> Vec<String> {
        self.images
            .iter()
            .filter(|i| i.split == split)
            .map(|i| i.id.clone())
            .collect()
    }

    fn active_captions(&self) -> CaptionIndex {
        self.captions.restrict(|id| self.corpus.contains(id))
    }
}

pub fn train_heads(inputs: &TrainInputs<'_>, cfg: &Config, exec: Execution) -> Result<TrainOutcome> {
    let texts = inputs.active_captions();
    let train_ids = inputs.split_ids(Split::Train);
    let dev_ids = inputs.split_ids(Split::Dev);
    let data = TrainingData {
        images: inputs.image_embeddings,
        article_images: inputs.article_images,
        texts: &texts,
        labels: inputs.labels,
        train_ids: &train_ids,
        dev_ids: &dev_ids,
    };
    train_biencoder(&data, &cfg.biencoder(), exec)
}

/// Location training groups for the images in `ids` that have an embedding.
pub fn location_groups(
    inputs: &TrainInputs<'_>,
    encoder: &BiEncoder,
    ids: &[String],
    k: usize,
    exec: Execution,
) -> Result<Vec<TrainGroup>> {
    let usable: Vec<&String> = ids.iter().filter(|id| inputs.image_embeddings.get(id).is_some()).collect();
    let empty = BTreeSet::new();
    exec.map(usable.len(), |i| {
        let id = usable[i].as_str();
        let image = inputs.image_embeddings.get(id).expect("filtered");
        let hits = encoder.search(image, k)?;
        let relevant = inputs.labels.location_relevant(id).unwrap_or(&empty);
        location_group(id, image, &hits, |a| inputs.corpus.get(a), relevant, inputs.templates)
    })
    .into_iter()
    .collect()
}

/// Per-image clusters over the top-`k` hits, as training groups (`train`)
/// and dev cases.
pub fn event_data(
    inputs: &TrainInputs<'_>,
    encoder: &BiEncoder,
    ids: &[String],
    cfg: &Config,
    exec: Execution,
) -> Result<Vec<(TrainGroup, EventCase)>> {
    let usable: Vec<&String> = ids.iter().filter(|id| inputs.image_embeddings.get(id).is_some()).collect();
    let empty = BTreeSet::new();
    exec.map(usable.len(), |i| {
        let id = usable[i].as_str();
        let image = inputs.image_embeddings.get(id).expect("filtered");
        let hits = encoder.search(image, cfg.k_evt)?;
        let items = cluster_items(&hits, |a| inputs.corpus.get(a))?;
        let clusters = form_clusters(&items, cfg.n_window_days, cfg.n_min_size).clusters;
        let relevant = inputs.labels.event_relevant(id).unwrap_or(&empty);
        let group = event_group(id, image, &items, &clusters, relevant, inputs.templates)?;
        let case = EventCase::new(image.to_vec(), items, clusters, relevant.clone(), inputs.templates)?;
        Ok((group, case))
    })
    .into_iter()
    .collect()
}

/// Unscored clusters over each image's top-`k_evt` hits. Their templates are
/// the texts the event scorer will ask the template encoder for.
pub fn candidate_clusters(
    corpus: &Corpus,
    images: &EmbeddingMatrix,
    captions: &CaptionIndex,
    heads: &HeadPair,
    ids: &[String],
    params: QueryParams,
    exec: Execution,
) -> Result<Vec<(String, Vec<ArticleCluster>)>> {
    let active = captions.restrict(|id| corpus.contains(id));
    let encoder = BiEncoder::new(heads.clone(), &active, exec)?;
    exec.map(ids.len(), |i| {
        let id = ids[i].as_str();
        let image = images.get(id).ok_or_else(|| Error::Lookup {
            kind: "image embedding",
            id: id.to_string(),
        })?;
        let hits = encoder.search(image, params.k_evt)?;
        let items = cluster_items(&hits, |a| corpus.get(a))?;
        let clusters = form_clusters(&items, params.n_window_days, params.n_min_size).clusters;
        Ok((id.to_string(), clusters))
    })
    .into_iter()
    .collect()
}

/// Dev location R@1 of the bi-encoder order and of the trained scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub outcome: XencOutcome,
    pub baseline_r_at_1: Option<f64>,
    pub trained_r_at_1: Option<f64>,
}

pub fn train_location_stage(
    inputs: &TrainInputs<'_>,
    heads: &HeadPair,
    cfg: &Config,
    exec: Execution,
) -> Result<StageOutcome> {
    let encoder = BiEncoder::new(heads.clone(), &inputs.active_captions(), exec)?;
    let train = location_groups(inputs, &encoder, &inputs.split_ids(Split::Train), cfg.k_loc, exec)?;
    let dev = location_groups(inputs, &encoder, &inputs.split_ids(Split::Dev), cfg.k_loc, exec)?;
    let dim = inputs.image_embeddings.dim();
    let outcome = train_location_scorer(&train, &dev, &cfg.loc_combiners, dim, &cfg.loc_training())?;
    Ok(StageOutcome {
        baseline_r_at_1: crate::rerank_loc::location_recall_at_1(&dev, None)?,
        trained_r_at_1: crate::rerank_loc::location_recall_at_1(&dev, Some(&outcome.scorer))?,
        outcome,
    })
}

pub fn train_event_stage(
    inputs: &TrainInputs<'_>,
    heads: &HeadPair,
    cfg: &Config,
    exec: Execution,
) -> Result<StageOutcome> {
    let encoder = BiEncoder::new(heads.clone(), &inputs.active_captions(), exec)?;
    let train: Vec<TrainGroup> = event_data(inputs, &encoder, &inputs.split_ids(Split::Train), cfg, exec)?
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    let dev: Vec<EventCase> = event_data(inputs, &encoder, &inputs.split_ids(Split::Dev), cfg, exec)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let dim = inputs.image_embeddings.dim();
    let outcome = train_event_scorer(&train, &dev, &cfg.evt_combiners, dim, &cfg.evt_training(), cfg.min_clusters)?;
    Ok(StageOutcome {
        baseline_r_at_1: bi_event_recall_at_1(&dev),
        trained_r_at_1: crate::cluster_event::event_recall_at_1(&dev, Some(&outcome.scorer), cfg.min_clusters)?,
        outcome,
    })
}

/// Event R@1 of the plain bi-encoder order.
fn bi_event_recall_at_1(cases: &[EventCase]) -> Option<f64> {
    let scored: Vec<bool> = cases
        .iter()
        .filter(|c| !c.relevant.is_empty())
        .map(|c| {
            c.items
                .iter()
                .min_by(|a, b| crate::cluster_event::bi_order(a, b))
                .is_some_and(|i| c.relevant.contains(&i.article_id))
        })
        .collect();
    (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64)
}

/// Metrics for each result against its gold record, in result order.
pub fn evaluate_run(
    results: &[RetrievalResult],
    gold: &[ImageRecord],
    corpus: &Corpus,
    gazetteer: Option<&Gazetteer>,
    cfg: &Config,
) -> Result<MetricsReport> {
    let empty_gaz = Gazetteer::default();
    let gaz = gazetteer.unwrap_or(&empty_gaz);
    let metrics = cfg.metrics();
    let mut queries = Vec::with_capacity(results.len());
    for r in results {
        let image = gold.iter().find(|g| g.id == r.image_id).ok_or_else(|| Error::Lookup {
            kind: "gold image",
            id: r.image_id.clone(),
        })?;
        let evt: Vec<&str> = r.event_ranking.iter().map(String::as_str).collect();
        let preds = extract_predictions(&r.location_ids(), &evt, |id| corpus.get(id), gazetteer);
        queries.push(evaluate_query(image, &preds, gaz, &metrics));
    }
    Ok(MetricsReport::aggregate(queries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTask {
    Date,
    Location,
}

/// Evidence prompt for a multimodal model: the top `top_n` articles of the
/// task's ranking (event ranking for dates, location ranking for places),
/// most relevant first, followed by the question.
pub fn render_evidence_prompt(
    result: &RetrievalResult,
    corpus: &Corpus,
    task: PromptTask,
    max_date: NaiveDate,
    top_n: usize,
) -> Result<String> {
    let ids: Vec<&str> = match task {
        PromptTask::Date => result.event_ranking.iter().map(String::as_str).collect(),
        PromptTask::Location => result.location_ids(),
    };
    if ids.is_empty() {
        return Err(Error::invalid(format!("no ranked articles for image {}", result.image_id)));
    }
    let mut out = String::from(
        "The news articles below were retrieved for the attached image, most relevant first. \
         Use them as evidence together with the image itself.\n",
    );
    for (n, id) in ids.iter().take(top_n).enumerate() {
        let a = corpus.get(id).ok_or_else(|| Error::Lookup {
            kind: "article",
            id: id.to_string(),
        })?;
        let _ = write!(
            out,
            "\nArticle {}\nHeadline: {}\nAbstract: {}\nPublication date: {}\nLocation keywords: {}\n",
            n + 1,
            a.headline,
            a.abstract_text,
            a.published_at,
            a.geo_keywords.join(", ")
        );
    }
    out.push('\n');
    match task {
        PromptTask::Date => {
            let _ = write!(
                out,
                "Question: On what date was this image taken? Give a single date in the range [1900-01-01, {max_date}] \
                 formatted as YYYY-MM-DD, or YYYY-MM or YYYY if you are less certain.\n"
            );
        }
        PromptTask::Location => {
            out.push_str(
                "Question: Where was this image taken? Answer with a comma-separated list (city,region,country), \
                 leaving out parts you cannot determine.\n",
            );
        }
    }
    Ok(out)
}
