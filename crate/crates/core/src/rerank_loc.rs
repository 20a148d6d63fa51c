//! Location reranking: a cross-scorer over (image, location template) pairs
//! reorders the bi-encoder's top-K, and the reordered list is the location
//! output of a query.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::article::Article;
use crate::embedstore::SearchHit;
use crate::error::{Error, Result};
use crate::templates::TemplateEncoder;
use crate::text::normalize_loose;
use crate::xenc::{self, Candidate, Combiner, CrossScorer, TrainGroup, XencOutcome, XencTrainConfig};

pub const UNKNOWN_LOCATION_TEMPLATE: &str = "An image from unknown location";

/// Template text for an article's geolocation keywords, in stored order.
pub fn location_template(keywords: &[String]) -> String {
    let kws: Vec<&str> = keywords.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).collect();
    if kws.is_empty() {
        UNKNOWN_LOCATION_TEMPLATE.to_string()
    } else {
        format!("An image from {}", kws.join(", "))
    }
}

/// Normalized keyword set used to keep training negatives apart. Articles
/// without keywords get `None` and never serve as negatives.
pub fn keyword_key(keywords: &[String]) -> Option<String> {
    let set: BTreeSet<String> = keywords
        .iter()
        .map(|k| normalize_loose(k))
        .filter(|k| !k.is_empty())
        .collect();
    if set.is_empty() {
        None
    } else {
        Some(set.into_iter().collect::<Vec<_>>().join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredArticle {
    pub article_id: String,
    pub s_bi: f32,
    pub s_loc: f32,
    pub s_comb: f32,
}

/// Negative bi-encoder scores are clamped to zero before weighting.
pub fn combined_score(s_bi: f32, s_loc: f32) -> f32 {
    s_bi.max(0.0) * s_loc
}

impl ScoredArticle {
    pub fn new(article_id: impl Into<String>, s_bi: f32, s_loc: f32) -> Self {
        ScoredArticle {
            article_id: article_id.into(),
            s_bi,
            s_loc,
            s_comb: combined_score(s_bi, s_loc),
        }
    }
}

/// `s_comb` desc, then `s_bi` desc, then id asc.
pub fn location_order(a: &ScoredArticle, b: &ScoredArticle) -> Ordering {
    b.s_comb
        .total_cmp(&a.s_comb)
        .then_with(|| b.s_bi.total_cmp(&a.s_bi))
        .then_with(|| a.article_id.cmp(&b.article_id))
}

fn lookup_article<'a>(lookup: &impl Fn(&str) -> Option<&'a Article>, id: &str) -> Result<&'a Article> {
    lookup(id).ok_or_else(|| Error::Lookup {
        kind: "article",
        id: id.to_string(),
    })
}

/// Scores each hit's location template against the (frozen) image vector
/// and returns the hits in location order.
pub fn rerank_by_location<'a>(
    image: &[f32],
    hits: &[SearchHit],
    lookup: impl Fn(&str) -> Option<&'a Article>,
    scorer: &CrossScorer,
    encoder: &dyn TemplateEncoder,
) -> Result<Vec<ScoredArticle>> {
    let mut out = Vec::with_capacity(hits.len());
    for h in hits {
        let a = lookup_article(&lookup, &h.article_id)?;
        let t = encoder.encode(&location_template(&a.geo_keywords))?;
        out.push(ScoredArticle::new(h.article_id.clone(), h.score, scorer.score(image, &t)?));
    }
    out.sort_by(location_order);
    Ok(out)
}

/// One training (or dev) group: the image's top-K hits, labelled by
/// location relevance.
pub fn location_group<'a>(
    image_id: &str,
    image: &[f32],
    hits: &[SearchHit],
    lookup: impl Fn(&str) -> Option<&'a Article>,
    relevant: &BTreeSet<String>,
    encoder: &dyn TemplateEncoder,
) -> Result<TrainGroup> {
    let mut candidates = Vec::with_capacity(hits.len());
    for h in hits {
        let a = lookup_article(&lookup, &h.article_id)?;
        candidates.push(Candidate {
            id: h.article_id.clone(),
            s_bi: h.score,
            relevant: relevant.contains(&h.article_id),
            // keyword-less articles share the fallback template, so they form
            // one more distinct negative class
            distinct_key: Some(keyword_key(&a.geo_keywords).unwrap_or_default()),
            template: encoder.encode(&location_template(&a.geo_keywords))?,
        });
    }
    Ok(TrainGroup {
        image_id: image_id.to_string(),
        image: image.to_vec(),
        candidates,
    })
}

/// Fraction of groups (with at least one relevant candidate) whose top item
/// is relevant. Without a scorer the bi-encoder order is used. `None` when no
/// group qualifies.
pub fn location_recall_at_1(groups: &[TrainGroup], scorer: Option<&CrossScorer>) -> Result<Option<f64>> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for g in groups {
        if !g.candidates.iter().any(|c| c.relevant) {
            continue;
        }
        n += 1;
        let mut scored = Vec::with_capacity(g.candidates.len());
        for c in &g.candidates {
            let s_loc = match scorer {
                Some(s) => s.score(&g.image, &c.template)?,
                None => 1.0,
            };
            scored.push((ScoredArticle::new(c.id.clone(), c.s_bi, s_loc), c.relevant));
        }
        scored.sort_by(|a, b| location_order(&a.0, &b.0));
        if scored[0].1 {
            hits += 1;
        }
    }
    Ok((n > 0).then(|| hits as f64 / n as f64))
}

/// Trains the location scorer; the best epoch is chosen by dev R@1.
pub fn train_location_scorer(
    train: &[TrainGroup],
    dev: &[TrainGroup],
    combiners: &[Combiner],
    dim: usize,
    cfg: &XencTrainConfig,
) -> Result<XencOutcome> {
    xenc::train_cross_scorer(train, combiners, dim, cfg, &|s| location_recall_at_1(dev, Some(s)))
}
