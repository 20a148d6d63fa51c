//! Date scores: the granularity-decomposed GREAT date score and Δ.

use serde::{Deserialize, Serialize};

use super::geo::InverseForm;
use crate::date::{Granularity, PartialDate};

/// Per-granularity thresholds `T_u` (in units of that granularity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DateThresholds {
    pub decade: f64,
    pub year: f64,
    pub month: f64,
    pub day: f64,
}

impl Default for DateThresholds {
    fn default() -> Self {
        DateThresholds {
            decade: 5.0,
            year: 10.0,
            month: 6.0,
            day: 15.0,
        }
    }
}

/// Per-granularity weights `w_u`; renormalized over the evaluated granularities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DateWeights {
    pub century: f64,
    pub decade: f64,
    pub year: f64,
    pub month: f64,
    pub day: f64,
}

impl Default for DateWeights {
    fn default() -> Self {
        DateWeights {
            century: 1.0,
            decade: 1.0,
            year: 1.0,
            month: 1.0,
            day: 1.0,
        }
    }
}

fn linear(diff: f64, threshold: f64) -> f64 {
    (1.0 - diff.abs() / threshold).max(0.0)
}

/// Component scores `S_u` for the granularities present in `gt`, coarsest first.
pub fn date_component_scores(pred: &PartialDate, gt: &PartialDate, t: &DateThresholds) -> Vec<(DateUnit, f64)> {
    let (py, gy) = (pred.year_value() as i64, gt.year_value() as i64);
    let mut out = vec![
        (
            DateUnit::Century,
            if py.div_euclid(100) == gy.div_euclid(100) { 1.0 } else { 0.0 },
        ),
        (
            DateUnit::Decade,
            linear((gy.div_euclid(10) - py.div_euclid(10)) as f64, t.decade),
        ),
        (DateUnit::Year, linear((gy - py) as f64, t.year)),
    ];
    if let Some(gm) = gt.month() {
        let s = pred.month().map_or(0.0, |pm| linear(gm as f64 - pm as f64, t.month));
        out.push((DateUnit::Month, s));
    }
    if let Some(gd) = gt.day() {
        let s = pred.day().map_or(0.0, |pd| linear(gd as f64 - pd as f64, t.day));
        out.push((DateUnit::Day, s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateUnit {
    Century,
    Decade,
    Year,
    Month,
    Day,
}

impl DateWeights {
    fn of(&self, g: DateUnit) -> f64 {
        match g {
            DateUnit::Century => self.century,
            DateUnit::Decade => self.decade,
            DateUnit::Year => self.year,
            DateUnit::Month => self.month,
            DateUnit::Day => self.day,
        }
    }
}

/// Weighted mean of `S_u` over the granularities the ground truth carries.
/// Finer prediction components than the ground truth are ignored.
pub fn great_date(pred: &PartialDate, gt: &PartialDate, t: &DateThresholds, w: &DateWeights) -> f64 {
    let scores = date_component_scores(pred, gt, t);
    let total: f64 = scores.iter().map(|(g, _)| w.of(*g)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    scores.iter().map(|(g, s)| w.of(*g) * s).sum::<f64>() / total
}

/// Δ: decays with the absolute year gap.
pub fn delta_year_with(pred: &PartialDate, gt: &PartialDate, form: InverseForm) -> f64 {
    form.apply((pred.year_value() as f64 - gt.year_value() as f64).abs())
}

pub fn delta_year(pred: &PartialDate, gt: &PartialDate) -> f64 {
    delta_year_with(pred, gt, InverseForm::Inverse)
}

/// Hierarchical date chain (finest first) at the ground truth's granularity.
pub fn date_chain(d: &PartialDate, g: Granularity) -> Vec<String> {
    let d = d.truncate(g);
    let mut chain = vec![d.to_string()];
    if d.granularity() == Granularity::Day {
        chain.push(d.truncate(Granularity::Month).to_string());
    }
    if d.granularity() != Granularity::Year {
        chain.push(d.truncate(Granularity::Year).to_string());
    }
    chain
}
