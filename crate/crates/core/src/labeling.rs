//! Weak-supervision relevance labels linking query images to articles.
//!
//! An article is *location-relevant* to an image when one of its geolocation
//! keywords contains a component of the image's ground-truth location, and
//! *event-relevant* when it is location-relevant and published within
//! ±`n_window` days of the image's day-precision date.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::article::Article;
use crate::date::{days_between, PartialDate};
use crate::error::{Error, Result};
use crate::metrics::GeoPoint;
use crate::par::Execution;
use crate::text::{location_components, normalize_loose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub gt_location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_coordinates: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_date: Option<PartialDate>,
    pub split: Split,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.gt_coordinates {
            GeoPoint::new(p.lat, p.lon)?;
        }
        Ok(())
    }
}

pub fn load_images(path: &Path) -> Result<Vec<ImageRecord>> {
    read_jsonl(path, |r: &ImageRecord| r.validate())
}

pub fn save_images(path: &Path, images: &[ImageRecord]) -> Result<()> {
    write_jsonl(path, images)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceLabels {
    pub image_id: String,
    pub location_relevant: BTreeSet<String>,
    pub event_relevant: BTreeSet<String>,
}

impl RelevanceLabels {
    /// Fails unless `event_relevant ⊆ location_relevant`.
    pub fn new(
        image_id: impl Into<String>,
        location_relevant: BTreeSet<String>,
        event_relevant: BTreeSet<String>,
    ) -> Result<Self> {
        let labels = RelevanceLabels {
            image_id: image_id.into(),
            location_relevant,
            event_relevant,
        };
        labels.check()?;
        Ok(labels)
    }

    fn check(&self) -> Result<()> {
        if let Some(a) = self
            .event_relevant
            .iter()
            .find(|a| !self.location_relevant.contains(*a))
        {
            return Err(Error::invalid(format!(
                "image {}: event-relevant article {a} is not location-relevant",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Normalized ground-truth location components used as match tokens.
pub fn location_tokens(gt_location: &str) -> Vec<String> {
    let mut toks: Vec<String> = location_components(gt_location)
        .iter()
        .map(|c| normalize_loose(c))
        .filter(|c| !c.is_empty())
        .collect();
    toks.sort();
    toks.dedup();
    toks
}

/// True when some keyword contains some token after loose normalization.
pub fn keywords_match(tokens: &[String], keywords: &[String]) -> bool {
    keywords.iter().any(|k| {
        let k = normalize_loose(k);
        !k.is_empty() && tokens.iter().any(|t| k.contains(t.as_str()))
    })
}

pub fn label_location_relevant(image: &ImageRecord, articles: &[Article]) -> BTreeSet<String> {
    let tokens = location_tokens(&image.gt_location);
    if tokens.is_empty() {
        return BTreeSet::new();
    }
    articles
        .iter()
        .filter(|a| keywords_match(&tokens, &a.geo_keywords))
        .map(|a| a.id.clone())
        .collect()
}

pub fn label_event_relevant(
    image: &ImageRecord,
    articles: &[Article],
    n_window: u32,
) -> BTreeSet<String> {
    let Some(gt) = image.gt_date.and_then(|d| d.as_date()) else {
        log::debug!("image {} has no day-precision date; no event labels", image.id);
        return BTreeSet::new();
    };
    let tokens = location_tokens(&image.gt_location);
    if tokens.is_empty() {
        return BTreeSet::new();
    }
    articles
        .iter()
        .filter(|a| days_between(a.published_at, gt).unsigned_abs() <= n_window as u64)
        .filter(|a| keywords_match(&tokens, &a.geo_keywords))
        .map(|a| a.id.clone())
        .collect()
}

pub fn label_image(image: &ImageRecord, articles: &[Article], n_window: u32) -> RelevanceLabels {
    let loc = label_location_relevant(image, articles);
    let evt = label_event_relevant(image, articles, n_window);
    RelevanceLabels::new(image.id.clone(), loc, evt).expect("event labels are built from location matches")
}

/// Relevance labels for many images, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelStore {
    by_image: BTreeMap<String, RelevanceLabels>,
}

impl LabelStore {
    pub fn build(images: &[ImageRecord], articles: &[Article], n_window: u32, exec: Execution) -> Self {
        let labels = exec.map(images.len(), |i| label_image(&images[i], articles, n_window));
        LabelStore::from_labels(labels)
    }

    pub fn from_labels(labels: impl IntoIterator<Item = RelevanceLabels>) -> Self {
        LabelStore {
            by_image: labels.into_iter().map(|l| (l.image_id.clone(), l)).collect(),
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&RelevanceLabels> {
        self.by_image.get(image_id)
    }

    pub fn event_relevant(&self, image_id: &str) -> Option<&BTreeSet<String>> {
        self.get(image_id).map(|l| &l.event_relevant)
    }

    pub fn location_relevant(&self, image_id: &str) -> Option<&BTreeSet<String>> {
        self.get(image_id).map(|l| &l.location_relevant)
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelevanceLabels> {
        self.by_image.values()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(LabelStore::from_labels(read_jsonl(path, |l: &RelevanceLabels| l.check())?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.by_image.values().collect::<Vec<_>>())
    }
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    validate: impl Fn(&T) -> Result<()>,
) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        validate(&rec).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
