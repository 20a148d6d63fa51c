//! Linear scorer over a combined (image, template) embedding pair, shared by
//! the location and event rerankers, and its pair-sampled training loop.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::biencoder::batch_seed;
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};

pub const LOC_MAGIC: &[u8; 4] = b"NRXL";
pub const EVT_MAGIC: &[u8; 4] = b"NRXE";
pub const XENC_VERSION: u16 = 1;

/// How the image and template vectors are merged into one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// `[x, y]`, two parts.
    Concatenation,
    /// `x ⊙ y`
    Multiplication,
    /// `x − y`
    Difference,
}

impl Combiner {
    fn code(self) -> u8 {
        match self {
            Combiner::Concatenation => 0,
            Combiner::Multiplication => 1,
            Combiner::Difference => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Combiner::Concatenation,
            1 => Combiner::Multiplication,
            2 => Combiner::Difference,
            _ => return None,
        })
    }

    fn parts(self) -> usize {
        match self {
            Combiner::Concatenation => 2,
            _ => 1,
        }
    }
}

/// Feature length for `combiners` over `dim`-wide inputs.
pub fn feature_len(combiners: &[Combiner], dim: usize) -> usize {
    combiners.iter().map(|c| c.parts()).sum::<usize>() * dim
}

/// Combined feature vector; combiners are applied in the given order.
pub fn combine(combiners: &[Combiner], x: &[f32], y: &[f32]) -> Vec<f64> {
    let mut f = Vec::with_capacity(feature_len(combiners, x.len()));
    for c in combiners {
        match c {
            Combiner::Concatenation => {
                f.extend(x.iter().map(|&v| v as f64));
                f.extend(y.iter().map(|&v| v as f64));
            }
            Combiner::Multiplication => f.extend(x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64)),
            Combiner::Difference => f.extend(x.iter().zip(y).map(|(&a, &b)| a as f64 - b as f64)),
        }
    }
    f
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest `f32` below one.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossScorer {
    combiners: Vec<Combiner>,
    dim: usize,
    weights: Vec<f32>,
    bias: f32,
}

impl CrossScorer {
    /// Zero weights: every pair scores 0.5.
    pub fn zeros(combiners: &[Combiner], dim: usize) -> Result<Self> {
        Self::new(combiners, dim, vec![0.0; feature_len(combiners, dim)], 0.0)
    }

    pub fn new(combiners: &[Combiner], dim: usize, weights: Vec<f32>, bias: f32) -> Result<Self> {
        let mut seen = BTreeSet::new();
        if combiners.is_empty() || !combiners.iter().all(|c| seen.insert(*c)) {
            return Err(Error::invalid("combiners must be a non-empty set"));
        }
        if dim == 0 {
            return Err(Error::invalid("scorer dim must be positive"));
        }
        let want = feature_len(combiners, dim);
        if weights.len() != want {
            return Err(Error::DimMismatch {
                expected: want,
                actual: weights.len(),
            });
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("scorer has non-finite weights"));
        }
        Ok(CrossScorer {
            combiners: combiners.to_vec(),
            dim,
            weights,
            bias,
        })
    }

    pub fn combiners(&self) -> &[Combiner] {
        &self.combiners
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_len(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn logit(&self, image: &[f32], template: &[f32]) -> Result<f64> {
        for v in [image, template] {
            if v.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
        }
        let f = combine(&self.combiners, image, template);
        Ok(f.iter().zip(&self.weights).map(|(a, &w)| a * w as f64).sum::<f64>() + self.bias as f64)
    }

    /// Relevance probability, strictly inside (0, 1).
    pub fn score(&self, image: &[f32], template: &[f32]) -> Result<f32> {
        let p = sigmoid(self.logit(image, template)?) as f32;
        Ok(p.clamp(f32::MIN_POSITIVE, BELOW_ONE))
    }

    pub fn to_bytes(&self, magic: &[u8; 4], config_hash: u64) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(magic, XENC_VERSION);
        w.u64(config_hash);
        w.u8(self.combiners.len() as u8);
        for c in &self.combiners {
            w.u8(c.code());
        }
        w.u32(self.dim as u32);
        w.u32(self.weights.len() as u32);
        w.f32s(&self.weights);
        w.f32(self.bias);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<(Self, u64)> {
        let mut r = ByteReader::open(bytes, magic, XENC_VERSION)?;
        let hash = r.u64("config hash")?;
        let n = r.u8("combiner count")? as usize;
        let mut combiners = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let code = r.u8("combiner")?;
            combiners.push(Combiner::from_code(code).ok_or_else(|| Error::format(at, format!("unknown combiner code {code}")))?);
        }
        let at = r.offset();
        let dim = r.u32("dim")? as usize;
        let len = r.u32("feature length")? as usize;
        if len != feature_len(&combiners, dim) {
            return Err(Error::format(
                at,
                format!("feature length {len} does not match {n} combiners over dim {dim}"),
            ));
        }
        let weights = r.f32s(len, "weights")?;
        let bias = r.f32("bias")?;
        r.expect_end()?;
        r.verify_checksum(bytes)?;
        let s = CrossScorer::new(&combiners, dim, weights, bias).map_err(|e| Error::format(at, e.to_string()))?;
        Ok((s, hash))
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4], config_hash: u64) -> Result<()> {
        binio::write_file(path, &self.to_bytes(magic, config_hash))
    }

    pub fn load(path: &Path, magic: &[u8; 4], expected_hash: Option<u64>) -> Result<Self> {
        let (s, found) = Self::from_bytes(&binio::read_file(path)?, magic)?;
        binio::check_hash(path, expected_hash, found)?;
        Ok(s)
    }
}

/// One retrieved item offered to the scorer during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    /// First-stage (bi-encoder) score.
    pub s_bi: f32,
    pub relevant: bool,
    /// Key that negatives must not share (e.g. the normalized keyword set);
    /// `None` makes the candidate ineligible as a negative.
    pub distinct_key: Option<String>,
    pub template: Vec<f32>,
}

/// An image with its top-K candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainGroup {
    pub image_id: String,
    pub image: Vec<f32>,
    pub candidates: Vec<Candidate>,
}

/// `(candidate index, label)` pairs: one uniformly chosen relevant candidate
/// and up to `n_negative` irrelevant ones with pairwise distinct keys. Groups
/// without a relevant candidate yield nothing.
pub fn sample_pairs(candidates: &[Candidate], n_negative: usize, rng: &mut impl Rng) -> Vec<(usize, bool)> {
    let relevant: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].relevant).collect();
    if relevant.is_empty() {
        return Vec::new();
    }
    let pos = relevant[rng.gen_range(0..relevant.len())];
    let mut out = vec![(pos, true)];
    let mut negatives: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].relevant && candidates[i].distinct_key.is_some())
        .collect();
    negatives.shuffle(rng);
    let mut keys = BTreeSet::new();
    if let Some(k) = &candidates[pos].distinct_key {
        keys.insert(k.as_str());
    }
    for i in negatives {
        if out.len() > n_negative {
            break;
        }
        let k = candidates[i].distinct_key.as_deref().expect("filtered");
        if keys.insert(k) {
            out.push((i, false));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XencTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub n_negative: usize,
    pub seed: u64,
}

impl XencTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("cross-scorer batch size must be positive".into()));
        }
        OptimizerConfig::adamw(self.learning_rate, self.weight_decay).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XencEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub pairs: usize,
    pub r_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XencOutcome {
    pub scorer: CrossScorer,
    pub log: Vec<XencEpochLog>,
    pub best_epoch: Option<usize>,
}

/// Binary cross-entropy training with AdamW. Pairs are resampled every epoch;
/// after each epoch `dev_metric` scores the current scorer and the best epoch
/// (earliest on ties, last when the metric is unavailable) is returned.
pub fn train_cross_scorer(
    groups: &[TrainGroup],
    combiners: &[Combiner],
    dim: usize,
    cfg: &XencTrainConfig,
    dev_metric: &dyn Fn(&CrossScorer) -> Result<Option<f64>>,
) -> Result<XencOutcome> {
    cfg.validate()?;
    let init = CrossScorer::zeros(combiners, dim)?;
    let has_pairs = groups.iter().any(|g| g.candidates.iter().any(|c| c.relevant));
    if cfg.epochs == 0 || !has_pairs {
        if !has_pairs && cfg.epochs > 0 {
            log::warn!("no training pairs for the cross-scorer; returning the untrained scorer");
        }
        return Ok(XencOutcome {
            scorer: init,
            log: Vec::new(),
            best_epoch: None,
        });
    }
    let flen = init.feature_len();
    let mut w = vec![0.0f64; flen];
    let mut b = vec![0.0f64; 1];
    let mut opt = Optimizer::new(OptimizerConfig::adamw(cfg.learning_rate, cfg.weight_decay), &[flen, 1]);
    let mut log = Vec::new();
    let mut best: Option<(usize, Option<f64>, CrossScorer)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed, epoch, usize::MAX));
        let mut pairs: Vec<(usize, usize, bool)> = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            pairs.extend(sample_pairs(&g.candidates, cfg.n_negative, &mut rng).into_iter().map(|(ci, l)| (gi, ci, l)));
        }
        pairs.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut gw = vec![0.0f64; flen];
            let mut gb = 0.0f64;
            let mut loss = 0.0;
            for &(gi, ci, label) in chunk {
                let g = &groups[gi];
                let f = combine(combiners, &g.image, &g.candidates[ci].template);
                let z: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b[0];
                let y = f64::from(u8::from(label));
                // softplus form of binary cross-entropy on the logit
                loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let d = (sigmoid(z) - y) / chunk.len() as f64;
                for (gwj, fj) in gw.iter_mut().zip(&f) {
                    *gwj += d * fj;
                }
                gb += d;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch_seed: batch_seed(cfg.seed, epoch, bi),
                });
            }
            loss_sum += loss;
            opt.begin_step();
            opt.update(0, &mut w, &gw);
            opt.update(1, &mut b, &[gb]);
        }
        let scorer = CrossScorer::new(
            combiners,
            dim,
            w.iter().map(|&v| v as f32).collect(),
            b[0] as f32,
        )?;
        let r = dev_metric(&scorer)?;
        let loss = if pairs.is_empty() { 0.0 } else { loss_sum / pairs.len() as f64 };
        log::info!("epoch {epoch}: loss {loss:.5} over {} pairs, dev R@1 {:?}", pairs.len(), r);
        log.push(XencEpochLog {
            epoch,
            loss,
            pairs: pairs.len(),
            r_at_1: r,
        });
        let better = match (&best, r) {
            (None, _) => true,
            (Some((_, Some(b), _)), Some(r)) => r > *b,
            (Some((_, None, _)), _) => true,
            (Some((_, Some(_), _)), None) => true,
        };
        if better {
            best = Some((epoch, r, scorer));
        }
    }
    let (best_epoch, _, scorer) = best.expect("ran at least one epoch");
    Ok(XencOutcome {
        scorer,
        log,
        best_epoch: Some(best_epoch),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scorer_is_one_half() {
        let s = CrossScorer::zeros(&[Combiner::Concatenation], 4).unwrap();
        assert_eq!(s.feature_len(), 8);
        assert_eq!(s.score(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(s.score(&[1.0], &[1.0, 0.0, 0.0, 0.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn scores_stay_inside_the_open_interval() {
        let all = [Combiner::Concatenation, Combiner::Multiplication, Combiner::Difference];
        assert_eq!(feature_len(&all, 3), 12);
        let big = CrossScorer::new(&all, 3, vec![1e30; 12], 0.0).unwrap();
        let p = big.score(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let small = CrossScorer::new(&all, 3, vec![-1e30; 12], 0.0).unwrap();
        let p = small.score(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn combine_layout() {
        let f = combine(&[Combiner::Concatenation, Combiner::Multiplication, Combiner::Difference], &[1.0, 2.0], &[3.0, 5.0]);
        assert_eq!(f, vec![1.0, 2.0, 3.0, 5.0, 3.0, 10.0, -2.0, -3.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = CrossScorer::new(&[Combiner::Multiplication, Combiner::Difference], 2, vec![0.5, -1.0, 2.0, 0.25], 0.1).unwrap();
        let bytes = s.to_bytes(EVT_MAGIC, 42);
        let (back, h) = CrossScorer::from_bytes(&bytes, EVT_MAGIC).unwrap();
        assert_eq!((back.clone(), h), (s, 42));
        assert_eq!(back.to_bytes(EVT_MAGIC, 42), bytes);
        assert!(matches!(CrossScorer::from_bytes(&bytes, LOC_MAGIC), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[15] = 9;
        assert!(matches!(CrossScorer::from_bytes(&bad, EVT_MAGIC), Err(Error::Format { offset: 15, .. })));
    }

    fn cand(id: &str, relevant: bool, key: Option<&str>) -> Candidate {
        Candidate {
            id: id.into(),
            s_bi: 0.0,
            relevant,
            distinct_key: key.map(String::from),
            template: vec![0.0],
        }
    }

    #[test]
    fn pair_sampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none: Vec<Candidate> = (0..20).map(|i| cand(&i.to_string(), false, Some("k"))).collect();
        assert!(sample_pairs(&none, 4, &mut rng).is_empty());

        let mut c: Vec<Candidate> = (0..3).map(|i| cand(&format!("r{i}"), true, Some("paris"))).collect();
        c.extend((0..17).map(|i| cand(&format!("n{i}"), false, Some(if i % 2 == 0 { "lyon" } else { "nice" }))));
        let p = sample_pairs(&c, 4, &mut rng);
        assert_eq!(p.iter().filter(|x| x.1).count(), 1);
        assert_eq!(p.iter().filter(|x| !x.1).count(), 2);

        let mut c: Vec<Candidate> = vec![cand("r", true, Some("x"))];
        c.extend((0..10).map(|i| cand(&format!("n{i}"), false, Some(&format!("k{i}")))));
        c.push(cand("empty", false, None));
        let p = sample_pairs(&c, 4, &mut rng);
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|(i, _)| c[*i].id != "empty"));
    }

    #[test]
    fn training_separates_a_planted_direction() {
        // relevant templates align with the image, irrelevant ones do not
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups: Vec<TrainGroup> = (0..40)
            .map(|g| {
                let image: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut candidates = vec![Candidate {
                    id: "pos".into(),
                    s_bi: 0.0,
                    relevant: true,
                    distinct_key: Some("pos".into()),
                    template: image.clone(),
                }];
                for n in 0..4 {
                    candidates.push(Candidate {
                        id: format!("neg{n}"),
                        s_bi: 0.0,
                        relevant: false,
                        distinct_key: Some(format!("neg{n}")),
                        template: image.iter().map(|v| -v + rng.gen_range(-0.3..0.3)).collect(),
                    });
                }
                TrainGroup {
                    image_id: format!("g{g}"),
                    image,
                    candidates,
                }
            })
            .collect();
        let cfg = XencTrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 16,
            n_negative: 4,
            seed: 1,
        };
        let out = train_cross_scorer(&groups, &[Combiner::Multiplication], 4, &cfg, &|_| Ok(None)).unwrap();
        assert_eq!(out.log.len(), 30);
        let mut correct = 0;
        for g in &groups {
            let p = out.scorer.score(&g.image, &g.candidates[0].template).unwrap();
            let n = out.scorer.score(&g.image, &g.candidates[1].template).unwrap();
            correct += usize::from(p > n);
        }
        assert!(correct >= 36, "{correct}");
    }
}
