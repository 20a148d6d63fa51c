//! Per-query event clustering over the bi-encoder's top-K articles, and
//! event reranking of the resulting clusters.
//!
//! Articles are visited by descending bi-encoder score. Each joins the first
//! existing cluster it is compatible with (a location keyword shared by every
//! member, and the cluster's date span stays within `2 · n_window` days) or
//! starts a new one. Clusters smaller than `n_min_size` are dissolved, and a
//! final pass offers each leftover article to the surviving clusters once more
//! so that no leftover can still extend an emitted cluster.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::article::Article;
use crate::date::days_between;
use crate::error::Result;
use crate::templates::TemplateEncoder;
use crate::xenc::{self, Candidate, Combiner, CrossScorer, TrainGroup, XencOutcome, XencTrainConfig};

/// What clustering needs to know about one retrieved article.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterItem {
    pub article_id: String,
    pub s_bi: f32,
    pub published_at: NaiveDate,
    /// Trimmed, non-empty geolocation keywords.
    pub keywords: BTreeSet<String>,
}

impl ClusterItem {
    pub fn new(article: &Article, s_bi: f32) -> Self {
        ClusterItem {
            article_id: article.id.clone(),
            s_bi,
            published_at: article.published_at,
            keywords: article
                .geo_keywords
                .iter()
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .collect(),
        }
    }
}

/// `s_bi` desc, then id asc.
pub fn bi_order(a: &ClusterItem, b: &ClusterItem) -> Ordering {
    b.s_bi.total_cmp(&a.s_bi).then_with(|| a.article_id.cmp(&b.article_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleCluster {
    /// Members in the order they joined.
    pub article_ids: Vec<String>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Keywords shared by every member.
    pub shared_locations: BTreeSet<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_evt: Option<f32>,
    /// Highest-scoring member.
    pub representative_id: String,
}

impl ArticleCluster {
    fn seed(item: &ClusterItem) -> Self {
        ArticleCluster {
            article_ids: vec![item.article_id.clone()],
            start_date: item.published_at,
            end_date: item.published_at,
            shared_locations: item.keywords.clone(),
            s_evt: None,
            representative_id: item.article_id.clone(),
        }
    }

    fn accepts(&self, item: &ClusterItem, n_window: u32) -> bool {
        let start = self.start_date.min(item.published_at);
        let end = self.end_date.max(item.published_at);
        days_between(end, start) <= 2 * n_window as i64
            && self.shared_locations.iter().any(|k| item.keywords.contains(k))
    }

    fn add(&mut self, item: &ClusterItem) {
        self.article_ids.push(item.article_id.clone());
        self.start_date = self.start_date.min(item.published_at);
        self.end_date = self.end_date.max(item.published_at);
        self.shared_locations.retain(|k| item.keywords.contains(k));
    }

    pub fn len(&self) -> usize {
        self.article_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.article_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.article_ids.iter().any(|a| a == id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    /// In creation order.
    pub clusters: Vec<ArticleCluster>,
    /// Articles in no cluster, in `s_bi` order.
    pub unclustered: Vec<String>,
}

pub fn form_clusters(items: &[ClusterItem], n_window: u32, n_min_size: usize) -> Clustering {
    let mut order: Vec<&ClusterItem> = items.iter().collect();
    order.sort_by(|a, b| bi_order(a, b));

    let mut clusters: Vec<ArticleCluster> = Vec::new();
    for item in &order {
        if item.keywords.is_empty() {
            continue;
        }
        match clusters.iter_mut().find(|c| c.accepts(item, n_window)) {
            Some(c) => c.add(item),
            None => clusters.push(ArticleCluster::seed(item)),
        }
    }
    clusters.retain(|c| c.len() >= n_min_size.max(1));

    let mut unclustered = Vec::new();
    for item in &order {
        if clusters.iter().any(|c| c.contains(&item.article_id)) {
            continue;
        }
        match clusters.iter_mut().find(|c| c.accepts(item, n_window)) {
            Some(c) => c.add(item),
            None => unclustered.push(item.article_id.clone()),
        }
    }
    // a late joiner can outscore the seed
    for c in &mut clusters {
        if let Some(top) = order.iter().find(|i| c.contains(&i.article_id)) {
            c.representative_id = top.article_id.clone();
        }
    }
    Clustering { clusters, unclustered }
}

pub fn event_template(cluster: &ArticleCluster) -> String {
    let locs: Vec<&str> = cluster.shared_locations.iter().map(String::as_str).collect();
    format!(
        "An image between {} and {} in {}",
        cluster.start_date,
        cluster.end_date,
        locs.join(", ")
    )
}

/// Fills `s_evt` on every cluster.
pub fn score_clusters(
    image: &[f32],
    clusters: &mut [ArticleCluster],
    scorer: &CrossScorer,
    encoder: &dyn TemplateEncoder,
) -> Result<()> {
    for c in clusters {
        let t = encoder.encode(&event_template(c))?;
        c.s_evt = Some(scorer.score(image, &t)?);
    }
    Ok(())
}

/// `s_evt` desc, start date asc, representative id asc.
pub fn cluster_order(a: &ArticleCluster, b: &ArticleCluster) -> Ordering {
    let s = |c: &ArticleCluster| c.s_evt.unwrap_or(f32::NEG_INFINITY);
    s(b).total_cmp(&s(a))
        .then_with(|| a.start_date.cmp(&b.start_date))
        .then_with(|| a.representative_id.cmp(&b.representative_id))
}

/// Final event ranking. With at least `min_clusters` clusters: representatives
/// in cluster order, then every other article by `s_bi`. Otherwise the plain
/// `s_bi` order. The second value tells which case applied.
pub fn event_ranking(items: &[ClusterItem], clusters: &[ArticleCluster], min_clusters: usize) -> (Vec<String>, bool) {
    let mut by_bi: Vec<&ClusterItem> = items.iter().collect();
    by_bi.sort_by(|a, b| bi_order(a, b));
    if clusters.is_empty() || clusters.len() < min_clusters {
        return (by_bi.iter().map(|i| i.article_id.clone()).collect(), false);
    }
    let mut ordered: Vec<&ArticleCluster> = clusters.iter().collect();
    ordered.sort_by(|a, b| cluster_order(a, b));
    let reps: BTreeSet<&str> = ordered.iter().map(|c| c.representative_id.as_str()).collect();
    let mut out: Vec<String> = ordered.iter().map(|c| c.representative_id.clone()).collect();
    out.extend(
        by_bi
            .iter()
            .filter(|i| !reps.contains(i.article_id.as_str()))
            .map(|i| i.article_id.clone()),
    );
    (out, true)
}

/// Training group with one candidate per cluster. A cluster is relevant when
/// it holds an event-relevant article; negatives must differ in template text.
pub fn event_group(
    image_id: &str,
    image: &[f32],
    items: &[ClusterItem],
    clusters: &[ArticleCluster],
    relevant: &BTreeSet<String>,
    encoder: &dyn TemplateEncoder,
) -> Result<TrainGroup> {
    let mut candidates = Vec::with_capacity(clusters.len());
    for c in clusters {
        let text = event_template(c);
        let s_bi = items
            .iter()
            .find(|i| i.article_id == c.representative_id)
            .map_or(0.0, |i| i.s_bi);
        candidates.push(Candidate {
            id: c.representative_id.clone(),
            s_bi,
            relevant: c.article_ids.iter().any(|a| relevant.contains(a)),
            template: encoder.encode(&text)?,
            distinct_key: Some(text),
        });
    }
    Ok(TrainGroup {
        image_id: image_id.to_string(),
        image: image.to_vec(),
        candidates,
    })
}

/// A dev query for event R@1: clusters come with their template vectors.
#[derive(Debug, Clone)]
pub struct EventCase {
    pub image: Vec<f32>,
    pub items: Vec<ClusterItem>,
    pub clusters: Vec<ArticleCluster>,
    pub templates: Vec<Vec<f32>>,
    pub relevant: BTreeSet<String>,
}

impl EventCase {
    pub fn new(
        image: Vec<f32>,
        items: Vec<ClusterItem>,
        clusters: Vec<ArticleCluster>,
        relevant: BTreeSet<String>,
        encoder: &dyn TemplateEncoder,
    ) -> Result<Self> {
        let templates = clusters
            .iter()
            .map(|c| encoder.encode(&event_template(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EventCase {
            image,
            items,
            clusters,
            templates,
            relevant,
        })
    }

    /// Top event-ranked article under `scorer` (uniform scores without one).
    pub fn top1(&self, scorer: Option<&CrossScorer>, min_clusters: usize) -> Result<Option<String>> {
        let mut clusters = self.clusters.clone();
        for (c, t) in clusters.iter_mut().zip(&self.templates) {
            c.s_evt = Some(match scorer {
                Some(s) => s.score(&self.image, t)?,
                None => 0.5,
            });
        }
        Ok(event_ranking(&self.items, &clusters, min_clusters).0.into_iter().next())
    }
}

/// Fraction of cases (with at least one relevant article) whose top event
/// output is event-relevant.
pub fn event_recall_at_1(cases: &[EventCase], scorer: Option<&CrossScorer>, min_clusters: usize) -> Result<Option<f64>> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for c in cases.iter().filter(|c| !c.relevant.is_empty()) {
        n += 1;
        if c.top1(scorer, min_clusters)?.is_some_and(|id| c.relevant.contains(&id)) {
            hits += 1;
        }
    }
    Ok((n > 0).then(|| hits as f64 / n as f64))
}

pub fn train_event_scorer(
    train: &[TrainGroup],
    dev: &[EventCase],
    combiners: &[Combiner],
    dim: usize,
    cfg: &XencTrainConfig,
    min_clusters: usize,
) -> Result<XencOutcome> {
    xenc::train_cross_scorer(train, combiners, dim, cfg, &|s| event_recall_at_1(dev, Some(s), min_clusters))
}
