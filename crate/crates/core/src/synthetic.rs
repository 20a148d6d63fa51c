//! A generated news world with planted location and event structure, used by
//! the acceptance suite, the benches and `nrec synth`.
//!
//! Events happen in a region during a week. Each article reports on one
//! event from one of the region's towns and is embedded as
//! `unit(town + region + event + noise)`. Images get an extra "style"
//! component confined to a few coordinates, which the projection heads must
//! learn to suppress. Town popularity follows a Zipf law so that popular
//! towns produce multi-article event clusters. Some articles carry no
//! location keywords and some only their region.

use std::collections::BTreeSet;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xxhash_rust::xxh3::xxh3_64;

use crate::article::{Article, Corpus, CorpusVariant, Source};
use crate::config::Config;
use crate::embedstore::{caption_row_id, normalize_in_place, CaptionIndex, EmbeddingMatrix};
use crate::error::Result;
use crate::labeling::{ImageRecord, LabelStore, Split};
use crate::metrics::{Gazetteer, GazetteerRow, GeoPoint};
use crate::par::Execution;
use crate::rerank_loc::UNKNOWN_LOCATION_TEMPLATE;
use crate::templates::{template_id, TemplateEncoder};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub dim: usize,
    pub num_towns: usize,
    pub num_regions: usize,
    pub num_weeks: usize,
    pub num_articles: usize,
    pub num_images: usize,
    pub zipf_exponent: f64,
    /// Larger values concentrate a town's coverage in fewer weeks.
    pub burstiness: f64,
    /// Share of articles without location keywords.
    pub unknown_location_share: f64,
    /// Share of articles tagged with their region only.
    pub region_only_share: f64,
    pub region_weight: f64,
    /// Weight of the event vector in caption embeddings; images always use 1.
    pub caption_event_weight: f64,
    pub caption_noise: f64,
    pub image_noise: f64,
    /// Trailing coordinates that carry the image style component.
    pub style_dims: usize,
    pub style_scale: f64,
    pub captions_per_article: usize,
    pub dev_share: f64,
    pub test_share: f64,
    pub start: NaiveDate,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 7,
            dim: 32,
            num_towns: 50,
            num_regions: 10,
            num_weeks: 40,
            num_articles: 2000,
            num_images: 1000,
            zipf_exponent: 1.0,
            burstiness: 5.0,
            unknown_location_share: 0.1,
            region_only_share: 0.1,
            region_weight: 0.5,
            caption_event_weight: 0.3,
            caption_noise: 0.8,
            image_noise: 0.5,
            style_dims: 12,
            style_scale: 3.0,
            captions_per_article: 2,
            dev_share: 0.15,
            test_share: 0.15,
            start: NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date"),
        }
    }
}

impl WorldSpec {
    /// Coordinate blocks for place and time; style takes the trailing
    /// `style_dims` and the rest is split evenly.
    pub fn factor_blocks(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let free = self.dim - self.style_dims.min(self.dim.saturating_sub(2));
        let p = (free / 2).max(1);
        (0..p, p..free.max(p + 1))
    }
}

pub fn town_name(i: usize) -> String {
    format!("Town{i:02}")
}

pub fn region_name(j: usize) -> String {
    format!("Land{j}")
}

pub const CONTINENT: &str = "Synthia";

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub corpus: Corpus,
    pub images: Vec<ImageRecord>,
    pub image_embeddings: EmbeddingMatrix,
    /// Each article's own photo, keyed by article id.
    pub article_images: EmbeddingMatrix,
    pub captions: CaptionIndex,
    pub gazetteer: Gazetteer,
    town_vecs: Vec<Vec<f64>>,
    region_vecs: Vec<Vec<f64>>,
    /// `[region][week]`
    event_vecs: Vec<Vec<Vec<f64>>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let s = scale / (dim as f64).sqrt();
    (0..dim).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        s * z
    }).collect()
}

fn unit64(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Unit vector supported on `range` only, zero elsewhere.
fn unit_in(rng: &mut ChaCha8Rng, dim: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let u = unit64(rng, range.len());
    v[range].copy_from_slice(&u);
    v
}

fn add(a: &mut [f64], b: &[f64], w: f64) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += w * y;
    }
}

fn to_unit_f32(v: &[f64]) -> Vec<f32> {
    let mut out: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    normalize_in_place(&mut out);
    out
}

/// Samples an index from unnormalized weights.
fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

impl World {
    pub fn generate(spec: &WorldSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.dim;
        // Place, time and style live in disjoint coordinate blocks.
        let (place, time) = spec.factor_blocks();
        let town_vecs: Vec<Vec<f64>> = (0..spec.num_towns).map(|_| unit_in(&mut rng, d, place.clone())).collect();
        let region_vecs: Vec<Vec<f64>> = (0..spec.num_regions).map(|_| unit_in(&mut rng, d, place.clone())).collect();
        let event_vecs: Vec<Vec<Vec<f64>>> = (0..spec.num_regions)
            .map(|_| (0..spec.num_weeks).map(|_| unit_in(&mut rng, d, time.clone())).collect())
            .collect();
        let region_of = |t: usize| t % spec.num_regions;

        let mut gaz_rows = Vec::new();
        for j in 0..spec.num_regions {
            gaz_rows.push(GazetteerRow {
                place: region_name(j),
                parent: String::new(),
                continent: CONTINENT.into(),
                lat: -40.0 + 8.0 * j as f64,
                lon: -60.0 + 12.0 * j as f64,
            });
        }
        for t in 0..spec.num_towns {
            let r = &gaz_rows[region_of(t)];
            let (lat, lon) = (r.lat + rng.gen_range(-1.5..1.5), r.lon + rng.gen_range(-1.5..1.5));
            gaz_rows.push(GazetteerRow {
                place: town_name(t),
                parent: region_name(region_of(t)),
                continent: String::new(),
                lat,
                lon,
            });
        }
        let gazetteer = Gazetteer::new(gaz_rows)?;

        // Popularity rank is a random permutation of the towns.
        let mut ranks: Vec<usize> = (0..spec.num_towns).collect();
        ranks.shuffle(&mut rng);
        let popularity: Vec<f64> = (0..spec.num_towns)
            .map(|t| 1.0 / ((ranks[t] + 1) as f64).powf(spec.zipf_exponent))
            .collect();

        // News comes in bursts: a region's coverage clusters in a few weeks.
        let week_weights: Vec<Vec<f64>> = (0..spec.num_regions)
            .map(|_| (0..spec.num_weeks).map(|_| rng.gen::<f64>().powf(spec.burstiness)).collect())
            .collect();

        let content = |t: usize, w: usize, event_weight: f64| {
            let mut c = town_vecs[t].clone();
            add(&mut c, &region_vecs[region_of(t)], spec.region_weight);
            add(&mut c, &event_vecs[region_of(t)][w], event_weight);
            c
        };
        let style_part = |rng: &mut ChaCha8Rng| {
            let mut s = vec![0.0; d];
            let k = spec.style_dims.min(d);
            let g = gaussian(rng, k, spec.style_scale * 2.0);
            s[d - k..].copy_from_slice(&g);
            s
        };

        let mut articles = Vec::with_capacity(spec.num_articles);
        let mut events = Vec::with_capacity(spec.num_articles);
        let mut cap_ids = Vec::new();
        let mut cap_data = Vec::new();
        let mut art_img_ids = Vec::new();
        let mut art_img_data = Vec::new();
        for n in 0..spec.num_articles {
            let t = pick(&popularity, &mut rng);
            let w = pick(&week_weights[region_of(t)], &mut rng);
            let day = spec.start + Days::new((w * 7 + rng.gen_range(0..7)) as u64);
            let id = format!("syn:{n:05}");
            let mut a = Article::new(&id, Source::Nytimes, format!("Event report {n} from week {w}"), day);
            a.abstract_text = format!("Coverage of an event during week {w}.");
            let u: f64 = rng.gen();
            a.geo_keywords = if u < spec.unknown_location_share {
                Vec::new()
            } else if u < spec.unknown_location_share + spec.region_only_share {
                vec![region_name(region_of(t))]
            } else {
                vec![town_name(t), region_name(region_of(t))]
            };
            let c = content(t, w, spec.caption_event_weight);
            for k in 0..spec.captions_per_article.max(1) {
                let mut v = c.clone();
                add(&mut v, &gaussian(&mut rng, d, spec.caption_noise), 1.0);
                cap_ids.push(caption_row_id(&id, k));
                cap_data.extend(to_unit_f32(&v));
                a.news_captions.push(format!("A photo related to event report {n}, caption {k}."));
            }
            let mut v = content(t, w, 1.0);
            add(&mut v, &gaussian(&mut rng, d, spec.image_noise), 1.0);
            add(&mut v, &style_part(&mut rng), 1.0);
            art_img_ids.push(id.clone());
            art_img_data.extend(to_unit_f32(&v));
            events.push((t, w));
            articles.push(a);
        }

        // Images depict events that made the news: sample a located article's event.
        let located: Vec<usize> = (0..articles.len()).filter(|&i| articles[i].geo_keywords.len() == 2).collect();
        let mut images = Vec::with_capacity(spec.num_images);
        let mut img_ids = Vec::new();
        let mut img_data = Vec::new();
        let n_dev = (spec.num_images as f64 * spec.dev_share).round() as usize;
        let n_test = (spec.num_images as f64 * spec.test_share).round() as usize;
        for n in 0..spec.num_images {
            let (t, w) = events[located[rng.gen_range(0..located.len())]];
            let day = spec.start + Days::new((w * 7 + rng.gen_range(0..7)) as u64);
            let split = if n < n_dev {
                Split::Dev
            } else if n < n_dev + n_test {
                Split::Test
            } else {
                Split::Train
            };
            let id = format!("img:{n:04}");
            let mut v = content(t, w, 1.0);
            add(&mut v, &gaussian(&mut rng, d, spec.image_noise), 1.0);
            add(&mut v, &style_part(&mut rng), 1.0);
            img_ids.push(id.clone());
            img_data.extend(to_unit_f32(&v));
            let town = town_name(t);
            images.push(ImageRecord {
                id,
                gt_location: format!("{town}, {}", region_name(region_of(t))),
                gt_coordinates: gazetteer.geocode(&town).map(|p| GeoPoint { lat: p.lat, lon: p.lon }),
                gt_date: Some(day.into()),
                split,
            });
        }

        Ok(World {
            spec: spec.clone(),
            corpus: Corpus::new(articles)?,
            images,
            image_embeddings: EmbeddingMatrix::new(img_ids, d, img_data)?,
            article_images: EmbeddingMatrix::new(art_img_ids, d, art_img_data)?,
            captions: CaptionIndex::new(EmbeddingMatrix::new(cap_ids, d, cap_data)?),
            gazetteer,
            town_vecs,
            region_vecs,
            event_vecs,
        })
    }

    pub fn labels(&self, n_window_days: u32, exec: Execution) -> LabelStore {
        LabelStore::build(&self.images, self.corpus.articles(), n_window_days, exec)
    }

    pub fn image_ids(&self, split: Split) -> Vec<String> {
        self.images.iter().filter(|i| i.split == split).map(|i| i.id.clone()).collect()
    }

    fn keyword_vec(&self, kw: &str) -> Vec<f64> {
        let kw = kw.trim();
        if let Some(t) = (0..self.spec.num_towns).find(|&t| town_name(t) == kw) {
            let mut v = self.town_vecs[t].clone();
            add(&mut v, &self.region_vecs[t % self.spec.num_regions], self.spec.region_weight);
            return v;
        }
        if let Some(j) = (0..self.spec.num_regions).find(|&j| region_name(j) == kw) {
            return self.region_vecs[j].clone();
        }
        self.hashed(kw)
    }

    fn hashed(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(xxh3_64(text.as_bytes()) ^ self.spec.seed);
        unit64(&mut rng, self.spec.dim)
    }

    fn week_of(&self, d: NaiveDate) -> Option<usize> {
        let days = (d - self.spec.start).num_days();
        (days >= 0 && (days as usize) < self.spec.num_weeks * 7).then(|| days as usize / 7)
    }

    fn encode_event(&self, rest: &str) -> Option<Vec<f64>> {
        let (start, rest) = rest.split_once(" and ")?;
        let (end, locs) = rest.split_once(" in ")?;
        let start: NaiveDate = start.parse().ok()?;
        let end: NaiveDate = end.parse().ok()?;
        let (w0, w1) = (self.week_of(start)?, self.week_of(end)?);
        let kws: Vec<&str> = locs.split(", ").filter(|k| !k.is_empty()).collect();
        let nr = self.spec.num_regions;
        let regions: BTreeSet<usize> = (0..self.spec.num_towns)
            .filter(|&t| kws.contains(&town_name(t).as_str()))
            .map(|t| t % nr)
            .chain((0..nr).filter(|&j| kws.contains(&region_name(j).as_str())))
            .collect();
        let mut v = vec![0.0; self.spec.dim];
        let n_events = (regions.len() * (w1 - w0 + 1)).max(1) as f64;
        for &j in &regions {
            for w in w0..=w1 {
                add(&mut v, &self.event_vecs[j][w], 1.0 / n_events);
            }
        }
        for k in &kws {
            add(&mut v, &self.keyword_vec(k), 1.0 / kws.len().max(1) as f64);
        }
        Some(v)
    }

    /// Template vectors for every template the pipeline can produce over this
    /// corpus' location keywords (event templates are encoded on demand).
    pub fn template_matrix<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<EmbeddingMatrix> {
        let set: BTreeSet<&str> = texts.into_iter().collect();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for t in set {
            ids.push(template_id(t));
            data.extend(self.encode(t)?);
        }
        EmbeddingMatrix::new(ids, self.spec.dim, data)
    }

    /// Scaled-down training settings that fit the synthetic corpus.
    pub fn config(&self) -> Config {
        Config {
            seed: self.spec.seed,
            bi_epochs: 8,
            bi_learning_rate: 0.5,
            bi_batch_size: 64,
            bi_eval_k: 100,
            loc_epochs: 5,
            loc_learning_rate: 1e-3,
            loc_batch_size: 128,
            evt_epochs: 15,
            evt_learning_rate: 5e-2,
            evt_batch_size: 128,
            ..Config::default()
        }
    }

    /// A subset keeping roughly `fraction` of the articles. Subsets for
    /// increasing fractions are nested.
    pub fn nested_variant(&self, fraction: f64) -> CorpusVariant {
        let mut order: Vec<(u64, &str)> = self
            .corpus
            .articles()
            .iter()
            .map(|a| (xxh3_64(format!("{}:{}", self.spec.seed, a.id).as_bytes()), a.id.as_str()))
            .collect();
        order.sort();
        let keep = (fraction.clamp(0.0, 1.0) * order.len() as f64).round() as usize;
        CorpusVariant {
            name: format!("share-{fraction:.3}"),
            max_date: NaiveDate::MAX,
            excluded_article_ids: order[keep..].iter().map(|(_, id)| id.to_string()).collect(),
        }
    }
}

impl TemplateEncoder for World {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let v = if text == UNKNOWN_LOCATION_TEMPLATE {
            self.hashed(text)
        } else if let Some(rest) = text.strip_prefix("An image between ") {
            self.encode_event(rest).unwrap_or_else(|| self.hashed(text))
        } else if let Some(rest) = text.strip_prefix("An image from ") {
            let mut v = vec![0.0; self.spec.dim];
            for k in rest.split(", ") {
                add(&mut v, &self.keyword_vec(k), 1.0);
            }
            v
        } else {
            self.hashed(text)
        };
        Ok(to_unit_f32(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldSpec {
        WorldSpec {
            num_articles: 300,
            num_images: 40,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = World::generate(&small()).unwrap();
        let b = World::generate(&small()).unwrap();
        assert_eq!(a.image_embeddings.to_bytes(), b.image_embeddings.to_bytes());
        assert_eq!(a.captions.matrix().to_bytes(), b.captions.matrix().to_bytes());
        assert_eq!(a.images, b.images);
        assert_eq!(a.corpus.len(), 300);
        assert_eq!(a.captions.matrix().rows(), 600);
    }

    #[test]
    fn templates_encode_structure() {
        let w = World::generate(&small()).unwrap();
        let t0 = w.encode("An image from Town00, Land0").unwrap();
        let t0b = w.encode("An image from Town00, Land0").unwrap();
        let t1 = w.encode("An image from Town01, Land1").unwrap();
        assert_eq!(t0, t0b);
        assert_ne!(t0, t1);
        let e = w.encode("An image between 2020-01-06 and 2020-01-12 in Town00").unwrap();
        assert!((crate::embedstore::norm(&e) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nested_variants() {
        let w = World::generate(&small()).unwrap();
        let a = w.nested_variant(1.0 / 3.0);
        let b = w.nested_variant(2.0 / 3.0);
        assert!(b.excluded_article_ids.is_subset(&a.excluded_article_ids));
        assert_eq!(w.nested_variant(1.0).excluded_article_ids.len(), 0);
        assert_eq!(a.excluded_article_ids.len(), 200);
    }
}
