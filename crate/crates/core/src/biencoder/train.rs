//! Training loop for the projection heads and event-candidate retrieval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{batch_split, build_batch, random_pool, ImageSampler, PairKind, TrainBatch};
use super::head::{HeadPair, ProjectionHead};
use super::loss::info_nce_loss;
use crate::embedstore::{CaptionIndex, EmbeddingMatrix, SearchHit};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::par::Execution;
use crate::labeling::LabelStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiEncoderConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_random: f64,
    pub temperature: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Projection width; defaults to the text embedding width.
    pub dim_out: Option<usize>,
    /// Cut-off for the dev recall used to pick the best epoch.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for BiEncoderConfig {
    fn default() -> Self {
        BiEncoderConfig {
            epochs: 10,
            learning_rate: 3e-5,
            batch_size: 256,
            n_random: 0.5,
            temperature: 0.07,
            momentum: 0.0,
            weight_decay: 0.0,
            dim_out: None,
            eval_k: 100,
            seed: 0,
        }
    }
}

impl BiEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.n_random) {
            return Err(Error::Config(format!("n_random must be in [0, 1], got {}", self.n_random)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.batch_size == 0 || self.eval_k == 0 {
            return Err(Error::Config("batch size and eval k must be positive".into()));
        }
        self.optimizer().validate()
    }

    fn optimizer(&self) -> OptimizerConfig {
        let mut o = OptimizerConfig::sgd(self.learning_rate);
        o.momentum = self.momentum;
        o.weight_decay = self.weight_decay;
        o
    }
}

/// Inputs to head training. Query images and article images are looked up by
/// id; captions come grouped per article.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub images: &'a EmbeddingMatrix,
    /// Each article's own image, keyed by article id (self-pairs).
    pub article_images: Option<&'a EmbeddingMatrix>,
    pub texts: &'a CaptionIndex,
    pub labels: &'a LabelStore,
    pub train_ids: &'a [String],
    pub dev_ids: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub r_at_100: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub heads: HeadPair,
    pub log: Vec<EpochLog>,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// Dev recall of the initial heads.
    pub baseline_recall: Option<f64>,
}

/// Distinct, reproducible seed for every batch.
pub fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ (batch as u64) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trainable copy of a head in f64.
struct Linear {
    din: usize,
    dout: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Linear {
    fn from_head(h: &ProjectionHead) -> Self {
        Linear {
            din: h.dim_in(),
            dout: h.dim_out(),
            w: h.weight().iter().map(|&v| v as f64).collect(),
            b: h.bias().iter().map(|&v| v as f64).collect(),
        }
    }

    fn to_head(&self) -> Result<ProjectionHead> {
        ProjectionHead::new(
            self.din,
            self.dout,
            self.w.iter().map(|&v| v as f32).collect(),
            self.b.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Normalized outputs (row-major) and the pre-normalization norms.
    fn forward(&self, xs: &[&[f32]], exec: Execution) -> (Vec<f64>, Vec<f64>) {
        let rows = exec.map(xs.len(), |r| {
            let mut y = self.b.clone();
            for (i, &xi) in xs[r].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &self.w[i * self.dout..(i + 1) * self.dout];
                for (yj, &w) in y.iter_mut().zip(wrow) {
                    *yj += xi as f64 * w;
                }
            }
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            (y.iter().map(|v| v / n).collect::<Vec<f64>>(), n)
        });
        let mut z = Vec::with_capacity(xs.len() * self.dout);
        let mut norms = Vec::with_capacity(xs.len());
        for (zr, n) in rows {
            z.extend(zr);
            norms.push(n);
        }
        (z, norms)
    }

    /// Gradients of W and b given dL/dz for normalized outputs.
    fn backward(&self, xs: &[&[f32]], z: &[f64], norms: &[f64], gz: &[f64], exec: Execution) -> (Vec<f64>, Vec<f64>) {
        let d = self.dout;
        let mut gy = vec![0.0f64; z.len()];
        for r in 0..xs.len() {
            let zr = &z[r * d..(r + 1) * d];
            let gr = &gz[r * d..(r + 1) * d];
            let proj: f64 = zr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..d {
                gy[r * d + j] = (gr[j] - zr[j] * proj) / norms[r];
            }
        }
        let gw_rows = exec.map(self.din, |i| {
            let mut row = vec![0.0f64; d];
            for (r, x) in xs.iter().enumerate() {
                let xi = x[i] as f64;
                if xi == 0.0 {
                    continue;
                }
                for j in 0..d {
                    row[j] += xi * gy[r * d + j];
                }
            }
            row
        });
        let gw = gw_rows.concat();
        let mut gb = vec![0.0f64; d];
        for r in 0..xs.len() {
            for j in 0..d {
                gb[j] += gy[r * d + j];
            }
        }
        (gw, gb)
    }
}

fn image_vector<'a>(data: &TrainingData<'a>, kind: PairKind, id: &str) -> Result<&'a [f32]> {
    let m = match kind {
        PairKind::Supervised => Some(data.images),
        PairKind::Random => data.article_images,
    };
    m.and_then(|m| m.get(id)).ok_or_else(|| Error::Lookup {
        kind: "image embedding",
        id: id.to_string(),
    })
}

/// Fraction of `ids` (those with event-relevant articles and an embedding)
/// having a relevant article among the top `k` retrieved with `heads`.
pub fn dev_recall(
    heads: &HeadPair,
    images: &EmbeddingMatrix,
    texts: &CaptionIndex,
    labels: &LabelStore,
    ids: &[String],
    k: usize,
    exec: Execution,
) -> Result<Option<f64>> {
    let usable: Vec<&String> = ids
        .iter()
        .filter(|id| images.get(id).is_some() && labels.event_relevant(id).is_some_and(|s| !s.is_empty()))
        .collect();
    if usable.is_empty() {
        return Ok(None);
    }
    let retriever = BiEncoder::new(heads.clone(), texts, exec)?;
    let hits = exec.map(usable.len(), |i| -> Result<bool> {
        let q = heads.image.project(images.get(usable[i]).expect("filtered"))?;
        let er = labels.event_relevant(usable[i]).expect("filtered");
        let top = retriever.index.top_k_with(&q, k, Execution::Sequential)?;
        Ok(top.iter().any(|h| er.contains(&h.article_id)))
    });
    let mut found = 0usize;
    for h in hits {
        found += usize::from(h?);
    }
    Ok(Some(found as f64 / usable.len() as f64))
}

/// Trains both heads with the symmetric contrastive loss and returns the
/// checkpoint of the epoch with the best dev recall (earliest on ties; the
/// last epoch when there is no dev data).
pub fn train_biencoder(data: &TrainingData<'_>, cfg: &BiEncoderConfig, exec: Execution) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim_out = cfg.dim_out.unwrap_or(data.texts.dim());
    let init = HeadPair::identity(data.images.dim(), data.texts.dim(), dim_out);
    let baseline = dev_recall(&init, data.images, data.texts, data.labels, data.dev_ids, cfg.eval_k, exec)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            heads: init,
            log: Vec::new(),
            best_epoch: None,
            baseline_recall: baseline,
        });
    }

    let mut sampler = ImageSampler::new(data.train_ids, data.labels, data.texts, batch_seed(cfg.seed, usize::MAX, 0));
    let pool = random_pool(
        data.texts,
        |a| data.article_images.is_some_and(|m| m.get(a).is_some()),
        data.labels,
        data.train_ids,
    );
    let (n_sup, n_rand) = batch_split(cfg.batch_size, cfg.n_random);
    let batches = match (n_sup > 0 && !sampler.is_empty(), n_rand > 0 && !pool.is_empty()) {
        (true, _) => sampler.len().div_ceil(n_sup),
        (false, true) => pool.len().div_ceil(n_rand),
        (false, false) => return Err(Error::invalid("no training pairs: no labelled train images and no self-pair pool")),
    };

    let mut img = Linear::from_head(&init.image);
    let mut txt = Linear::from_head(&init.text);
    let mut opt = Optimizer::new(cfg.optimizer(), &[img.w.len(), img.b.len(), txt.w.len(), txt.b.len()]);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>, HeadPair)> = None;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for b in 0..batches {
            let seed = batch_seed(cfg.seed, epoch, b);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch: TrainBatch = build_batch(&mut sampler, &pool, data.texts, cfg.batch_size, cfg.n_random, &mut rng);
            if batch.pairs.is_empty() {
                continue;
            }
            let xs: Vec<&[f32]> = batch
                .pairs
                .iter()
                .map(|p| image_vector(data, p.kind, &p.image_id))
                .collect::<Result<_>>()?;
            let ts: Vec<&[f32]> = batch.pairs.iter().map(|p| data.texts.matrix().row(p.caption_row)).collect();
            let (zi, ni) = img.forward(&xs, exec);
            let (zt, nt) = txt.forward(&ts, exec);
            let l = info_nce_loss(&zi, &zt, dim_out, cfg.temperature)?;
            if !l.loss.is_finite() || l.grad_images.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch_seed: seed });
            }
            loss_sum += l.loss;
            loss_n += 1;
            let (gwi, gbi) = img.backward(&xs, &zi, &ni, &l.grad_images, exec);
            let (gwt, gbt) = txt.backward(&ts, &zt, &nt, &l.grad_captions, exec);
            opt.begin_step();
            opt.update(0, &mut img.w, &gwi);
            opt.update(1, &mut img.b, &gbi);
            opt.update(2, &mut txt.w, &gwt);
            opt.update(3, &mut txt.b, &gbt);
        }
        let heads = HeadPair::new(img.to_head()?, txt.to_head()?)?;
        let r = dev_recall(&heads, data.images, data.texts, data.labels, data.dev_ids, cfg.eval_k, exec)?;
        let loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
        log::info!("epoch {epoch}: loss {loss:.5}, dev recall@{} {:?}", cfg.eval_k, r);
        log.push(EpochLog { epoch, loss, r_at_100: r });
        let better = match &best {
            None => true,
            Some((_, best_r, _)) => match (r, best_r) {
                (Some(r), Some(b)) => r > *b,
                (None, _) => true,
                (Some(_), None) => true,
            },
        };
        if better {
            best = Some((epoch, r, heads));
        }
    }
    let (best_epoch, _, heads) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        heads,
        log,
        best_epoch: Some(best_epoch),
        baseline_recall: baseline,
    })
}

/// Heads plus the caption index projected through the text head.
#[derive(Debug, Clone)]
pub struct BiEncoder {
    heads: HeadPair,
    index: CaptionIndex,
}

impl BiEncoder {
    pub fn new(heads: HeadPair, texts: &CaptionIndex, exec: Execution) -> Result<Self> {
        let projected = heads.text.project_matrix(texts.matrix(), exec)?;
        let index = texts.with_matrix(projected)?;
        Ok(BiEncoder { heads, index })
    }

    pub fn heads(&self) -> &HeadPair {
        &self.heads
    }

    pub fn index(&self) -> &CaptionIndex {
        &self.index
    }

    pub fn project_image(&self, v: &[f32]) -> Result<Vec<f32>> {
        self.heads.image.project(v)
    }

    /// Top-`k` articles for a raw (unprojected) image embedding.
    pub fn search(&self, image: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.index.top_k_with(&self.project_image(image)?, k, Execution::Sequential)
    }
}

/// Looks up the image, projects it and searches the projected captions.
pub fn retrieve_event_candidates(
    image_id: &str,
    images: &EmbeddingMatrix,
    encoder: &BiEncoder,
    k: usize,
) -> Result<Vec<SearchHit>> {
    let v = images.get(image_id).ok_or_else(|| Error::Lookup {
        kind: "image embedding",
        id: image_id.to_string(),
    })?;
    encoder.search(v, k)
}

/// Training log as one JSON record per epoch.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect()
}
