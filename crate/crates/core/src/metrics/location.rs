//! Hierarchical location chains, Example-F1 and exact-match scoring.

use std::collections::BTreeSet;
use std::fmt;

use crate::date::PartialDate;
use crate::error::{Error, Result};
use crate::text::{location_components, normalize_strict};

use super::date::date_chain;
use super::geo::Gazetteer;

/// Location components ordered child→parent, e.g. `[Paris, France, Europe]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierLocation {
    components: Vec<String>,
}

impl HierLocation {
    /// Drops blank and repeated (after normalization) components.
    pub fn new<S: AsRef<str>>(components: &[S]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let components: Vec<String> = components
            .iter()
            .map(|c| c.as_ref().trim().to_string())
            .filter(|c| !c.is_empty() && seen.insert(normalize_strict(c)))
            .collect();
        if components.is_empty() {
            return Err(Error::invalid("location has no components"));
        }
        Ok(HierLocation { components })
    }

    /// Parses `"city, region, country"`.
    pub fn parse(s: &str) -> Result<Self> {
        Self::new(&location_components(s))
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    /// Adds the gazetteer's parent regions and continent.
    pub fn expanded(&self, gazetteer: &Gazetteer) -> Self {
        HierLocation {
            components: gazetteer.expand(&self.components),
        }
    }

    fn normalized(&self) -> Vec<String> {
        self.components.iter().map(|c| normalize_strict(c)).collect()
    }

    /// Every suffix of the child→parent list.
    pub fn chains(&self) -> BTreeSet<Vec<String>> {
        let n = self.normalized();
        (0..n.len()).map(|i| n[i..].to_vec()).collect()
    }

    fn component_set(&self) -> BTreeSet<String> {
        self.normalized().into_iter().collect()
    }
}

impl fmt::Display for HierLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.components.join(", "))
    }
}

fn dice<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// Dice overlap of the two locations' suffix-chain sets.
pub fn example_f1(pred: &HierLocation, gt: &HierLocation) -> f64 {
    dice(&pred.chains(), &gt.chains())
}

/// Dice overlap of date chains (`YYYY-MM-DD`, `YYYY-MM`, `YYYY`) at the
/// ground truth's granularity.
pub fn date_example_f1(pred: &PartialDate, gt: &PartialDate) -> f64 {
    let g = gt.granularity();
    let p: BTreeSet<String> = date_chain(pred, g).into_iter().collect();
    let t: BTreeSet<String> = date_chain(gt, g).into_iter().collect();
    dice(&p, &t)
}

/// A prediction finer than the ground truth still matches: every ground-truth
/// component must appear in the prediction.
pub fn location_matches(pred: &HierLocation, gt: &HierLocation) -> bool {
    gt.component_set().is_subset(&pred.component_set())
}

/// The prediction truncated to the ground truth's granularity equals it.
pub fn date_matches(pred: &PartialDate, gt: &PartialDate) -> bool {
    pred.granularity() >= gt.granularity() && pred.truncate(gt.granularity()) == *gt
}

fn dedup_first_k<T: Clone>(preds: &[T], k: usize, key: impl Fn(&T) -> String) -> Vec<T> {
    let mut seen = BTreeSet::new();
    preds
        .iter()
        .filter(|p| seen.insert(key(p)))
        .take(k)
        .cloned()
        .collect()
}

pub fn em_at_k_locations(preds: &[HierLocation], gt: &HierLocation, k: usize) -> f64 {
    let top = dedup_first_k(preds, k, |p| p.normalized().join(","));
    f64::from(u8::from(top.iter().any(|p| location_matches(p, gt))))
}

pub fn em_at_k_dates(preds: &[PartialDate], gt: &PartialDate, k: usize) -> f64 {
    let top = dedup_first_k(preds, k, |p| p.to_string());
    f64::from(u8::from(top.iter().any(|p| date_matches(p, gt))))
}

/// String-level EM@K. Dates are compared when the ground truth and a
/// prediction both parse as dates, otherwise strings are treated as
/// comma-separated locations.
pub fn em_at_k(preds: &[String], gt: &str, k: usize) -> f64 {
    let top = dedup_first_k(preds, k, |p| normalize_strict(p));
    let gt_date = gt.trim().parse::<PartialDate>().ok();
    let gt_loc = HierLocation::parse(gt).ok();
    let hit = top.iter().any(|p| {
        if let (Some(g), Ok(pd)) = (gt_date.as_ref(), p.trim().parse::<PartialDate>()) {
            return date_matches(&pd, g);
        }
        match (gt_loc.as_ref(), HierLocation::parse(p)) {
            (Some(g), Ok(pl)) => location_matches(&pl, g),
            _ => false,
        }
    });
    f64::from(u8::from(hit))
}
