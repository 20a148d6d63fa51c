//! Contrastive batch construction under the forbidden-caption rule.
//!
//! A batch mixes supervised pairs (train image, caption of one of its
//! event-relevant articles) with self-pairs (an article's own image, its own
//! caption) drawn from articles that are relevant to no train image. Pairs are
//! added one at a time; once an image is in the batch, captions of all its
//! event-relevant articles become forbidden, so no caption ends up relevant to
//! two images of the same batch.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedstore::CaptionIndex;
use crate::labeling::LabelStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Supervised,
    /// An article paired with its own image.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    /// Train image id, or the article id for [`PairKind::Random`].
    pub image_id: String,
    pub kind: PairKind,
    /// Row in the caption matrix.
    pub caption_row: usize,
    pub caption_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBatch {
    pub pairs: Vec<TrainPair>,
    /// Caption row ids event-relevant to some image in the batch.
    pub forbidden: BTreeSet<String>,
}

impl TrainBatch {
    pub fn count(&self, kind: PairKind) -> usize {
        self.pairs.iter().filter(|p| p.kind == kind).count()
    }
}

/// `(supervised, random)` pair counts for a full batch.
pub fn batch_split(batch_size: usize, n_random: f64) -> (usize, usize) {
    let random = (n_random * batch_size as f64 + 1e-9).floor() as usize;
    let random = random.min(batch_size);
    (batch_size - random, random)
}

/// Endless stream of train images with usable labels, reshuffled on every pass.
/// Images that could not be placed in a batch are offered first next time.
#[derive(Debug, Clone)]
pub struct ImageSampler {
    ids: Vec<String>,
    relevant: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
    deferred: VecDeque<usize>,
    rng: ChaCha8Rng,
}

impl ImageSampler {
    /// Keeps images whose event-relevant set contains at least one indexed
    /// article; the rest are skipped (logged).
    pub fn new(image_ids: &[String], labels: &LabelStore, texts: &CaptionIndex, seed: u64) -> Self {
        let mut ids = Vec::new();
        let mut relevant = Vec::new();
        let mut skipped = 0usize;
        let mut sorted: Vec<&String> = image_ids.iter().collect();
        sorted.sort();
        sorted.dedup();
        for id in sorted {
            let er: Vec<usize> = labels
                .event_relevant(id)
                .map(|s| s.iter().filter_map(|a| texts.article_position(a)).collect())
                .unwrap_or_default();
            if er.is_empty() {
                skipped += 1;
                continue;
            }
            ids.push(id.clone());
            relevant.push(er);
        }
        if skipped > 0 {
            log::info!("{skipped} train images have no indexed event-relevant article and are skipped");
        }
        let order = (0..ids.len()).collect();
        let mut s = ImageSampler {
            ids,
            relevant,
            order,
            cursor: 0,
            deferred: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn next(&mut self) -> Option<usize> {
        if let Some(i) = self.deferred.pop_front() {
            return Some(i);
        }
        if self.ids.is_empty() {
            return None;
        }
        if self.cursor == self.order.len() {
            self.reshuffle();
        }
        self.cursor += 1;
        Some(self.order[self.cursor - 1])
    }

    fn defer(&mut self, imgs: Vec<usize>) {
        for i in imgs.into_iter().rev() {
            self.deferred.push_front(i);
        }
    }
}

/// Articles eligible for self-pairs: indexed, with an image embedding, and
/// event-relevant to no train image. Positions are into `texts`.
pub fn random_pool(
    texts: &CaptionIndex,
    has_image: impl Fn(&str) -> bool,
    labels: &LabelStore,
    train_ids: &[String],
) -> Vec<usize> {
    let mut relevant: HashSet<&str> = HashSet::new();
    for id in train_ids {
        if let Some(er) = labels.event_relevant(id) {
            relevant.extend(er.iter().map(String::as_str));
        }
    }
    texts
        .article_ids()
        .iter()
        .enumerate()
        .filter(|(_, a)| !relevant.contains(a.as_str()) && has_image(a))
        .map(|(i, _)| i)
        .collect()
}

fn pick_caption(texts: &CaptionIndex, article: usize, rng: &mut ChaCha8Rng) -> (usize, String) {
    let rows = texts.rows_of(article);
    let row = rows[rng.gen_range(0..rows.len())] as usize;
    (row, texts.matrix().ids()[row].clone())
}

/// Builds one batch. Short batches (with a warning) only happen when the
/// attempt budget runs out.
pub fn build_batch(
    sampler: &mut ImageSampler,
    pool: &[usize],
    texts: &CaptionIndex,
    batch_size: usize,
    n_random: f64,
    rng: &mut ChaCha8Rng,
) -> TrainBatch {
    let (want_sup, want_rand) = batch_split(batch_size, n_random);
    let mut batch = TrainBatch::default();
    let mut forbidden: HashSet<usize> = HashSet::new();
    let mut in_batch_articles: HashSet<usize> = HashSet::new();
    let mut in_batch_images: HashSet<usize> = HashSet::new();
    let mut set_aside = Vec::new();

    let budget = 4 * want_sup + sampler.len();
    let mut attempts = 0;
    while batch.count(PairKind::Supervised) < want_sup && attempts < budget {
        attempts += 1;
        let Some(img) = sampler.next() else { break };
        let er = &sampler.relevant[img];
        let clashes = in_batch_images.contains(&img) || er.iter().any(|a| in_batch_articles.contains(a));
        let candidates: Vec<usize> = er.iter().copied().filter(|a| !forbidden.contains(a)).collect();
        if clashes || candidates.is_empty() {
            set_aside.push(img);
            continue;
        }
        let article = candidates[rng.gen_range(0..candidates.len())];
        let (caption_row, caption_id) = pick_caption(texts, article, rng);
        batch.pairs.push(TrainPair {
            image_id: sampler.ids[img].clone(),
            kind: PairKind::Supervised,
            caption_row,
            caption_id,
        });
        forbidden.extend(er.iter().copied());
        in_batch_articles.insert(article);
        in_batch_images.insert(img);
    }
    // Deferred images that were set aside because they were already in this
    // batch are dropped; they come round again after the next reshuffle.
    let mut seen = HashSet::new();
    set_aside.retain(|i| !in_batch_images.contains(i) && seen.insert(*i));
    sampler.defer(set_aside);

    let budget = 4 * want_rand + 16;
    let mut attempts = 0;
    while batch.count(PairKind::Random) < want_rand && attempts < budget && !pool.is_empty() {
        attempts += 1;
        let article = pool[rng.gen_range(0..pool.len())];
        if in_batch_articles.contains(&article) || forbidden.contains(&article) {
            continue;
        }
        let (caption_row, caption_id) = pick_caption(texts, article, rng);
        batch.pairs.push(TrainPair {
            image_id: texts.article_ids()[article].clone(),
            kind: PairKind::Random,
            caption_row,
            caption_id,
        });
        in_batch_articles.insert(article);
    }

    if batch.pairs.len() < want_sup + want_rand {
        log::warn!(
            "emitting short batch: {} of {} pairs ({} supervised, {} random)",
            batch.pairs.len(),
            want_sup + want_rand,
            batch.count(PairKind::Supervised),
            batch.count(PairKind::Random)
        );
    }
    let mut forbidden: Vec<usize> = forbidden.into_iter().collect();
    forbidden.sort_unstable();
    for a in forbidden {
        for &r in texts.rows_of(a) {
            batch.forbidden.insert(texts.matrix().ids()[r as usize].clone());
        }
    }
    batch
}

/// Post-hoc check that no caption in `batch` is event-relevant to more than one
/// of its images (or to any train image, for self-pairs).
pub fn check_batch(batch: &TrainBatch, labels: &LabelStore) -> Result<(), String> {
    let images: Vec<&str> = batch
        .pairs
        .iter()
        .filter(|p| p.kind == PairKind::Supervised)
        .map(|p| p.image_id.as_str())
        .collect();
    let mut seen_images = HashSet::new();
    for img in &images {
        if !seen_images.insert(*img) {
            return Err(format!("image {img} appears twice"));
        }
    }
    for p in &batch.pairs {
        let article = crate::embedstore::split_caption_id(&p.caption_id).0;
        let relevant_to: Vec<&str> = images
            .iter()
            .copied()
            .filter(|img| labels.event_relevant(img).is_some_and(|er| er.contains(article)))
            .collect();
        match p.kind {
            PairKind::Supervised => {
                if relevant_to != [p.image_id.as_str()] {
                    return Err(format!("caption {} is event-relevant to {:?}", p.caption_id, relevant_to));
                }
            }
            PairKind::Random => {
                if !relevant_to.is_empty() {
                    return Err(format!("self-pair caption {} is relevant to {:?}", p.caption_id, relevant_to));
                }
            }
        }
    }
    Ok(())
}
