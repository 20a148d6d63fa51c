//! Date and location evaluation: exact match, Example-F1, inverse-distance
//! scores and GREAT, plus per-query extraction and aggregate reports.

mod date;
mod geo;
mod location;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use date::{date_chain, date_component_scores, delta_year, delta_year_with, great_date, DateThresholds, DateUnit, DateWeights};
pub use geo::{
    co_delta, co_delta_with, geocode, great_loc, great_loc_km, haversine_km, Gazetteer, GazetteerRow, GeoPoint,
    InverseForm, EARTH_RADIUS_KM,
};
pub use location::{
    date_example_f1, date_matches, em_at_k, em_at_k_dates, em_at_k_locations, example_f1, location_matches,
    HierLocation,
};

use crate::article::Article;
use crate::date::PartialDate;
use crate::error::{Error, Result};
use crate::labeling::ImageRecord;

pub const SKIP_NO_GT_DATE: &str = "no_gt_date";
pub const SKIP_NO_DATE_PREDICTION: &str = "no_date_prediction";
pub const SKIP_NO_GT_LOCATION: &str = "no_gt_location";
pub const SKIP_NO_LOCATION_PREDICTION: &str = "no_location_prediction";
pub const SKIP_PRED_GEOCODE_MISS: &str = "pred_geocode_miss";
pub const SKIP_GT_GEOCODE_MISS: &str = "gt_geocode_miss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub thresholds: DateThresholds,
    pub date_weights: DateWeights,
    /// Weight of the date half of GREAT.
    pub great_date_weight: f64,
    /// Weight of the location half of GREAT.
    pub great_loc_weight: f64,
    pub delta_form: InverseForm,
    pub co_delta_form: InverseForm,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            thresholds: DateThresholds::default(),
            date_weights: DateWeights::default(),
            great_date_weight: 0.5,
            great_loc_weight: 0.5,
            delta_form: InverseForm::Inverse,
            co_delta_form: InverseForm::Inverse,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [("decade", t.decade), ("year", t.year), ("month", t.month), ("day", t.day)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("threshold_{name} must be positive, got {v}")));
            }
        }
        let w = &self.date_weights;
        for (name, v) in [
            ("century", w.century),
            ("decade", w.decade),
            ("year", w.year),
            ("month", w.month),
            ("day", w.day),
            ("great_date", self.great_date_weight),
            ("great_loc", self.great_loc_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight_{name} must be non-negative, got {v}")));
            }
        }
        if w.century + w.decade + w.year <= 0.0 {
            return Err(Error::Config("year-level date weights must not all be zero".into()));
        }
        if self.great_date_weight + self.great_loc_weight <= 0.0 {
            return Err(Error::Config("GREAT weights must not both be zero".into()));
        }
        Ok(())
    }

    pub fn great(&self, date: f64, loc: f64) -> f64 {
        (self.great_date_weight * date + self.great_loc_weight * loc) / (self.great_date_weight + self.great_loc_weight)
    }
}

/// Ranked predictions taken from the metadata of retrieved articles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub locations: Vec<HierLocation>,
    pub dates: Vec<PartialDate>,
}

/// Location predictions come from the location ranking (articles without
/// keywords contribute nothing), date predictions from the event ranking.
/// Keywords are ordered child→parent when a gazetteer is given.
pub fn extract_predictions<'a, S: AsRef<str>>(
    loc_ranking: &[S],
    evt_ranking: &[S],
    lookup: impl Fn(&str) -> Option<&'a Article>,
    gazetteer: Option<&Gazetteer>,
) -> Predictions {
    let locations = loc_ranking
        .iter()
        .filter_map(|id| lookup(id.as_ref()))
        .filter_map(|a| {
            let kws = match gazetteer {
                Some(g) => g.order_child_to_parent(&a.geo_keywords),
                None => a.geo_keywords.clone(),
            };
            HierLocation::new(&kws).ok()
        })
        .collect();
    let dates = evt_ranking
        .iter()
        .filter_map(|id| lookup(id.as_ref()))
        .map(|a| PartialDate::from(a.published_at))
        .collect();
    Predictions { locations, dates }
}

/// Scores for one query; `None` where the metric could not be computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub image_id: String,
    pub date_em1: Option<f64>,
    pub date_em5: Option<f64>,
    pub date_ef1: Option<f64>,
    pub delta: Option<f64>,
    pub great_date: Option<f64>,
    pub loc_em1: Option<f64>,
    pub loc_em5: Option<f64>,
    pub loc_ef1: Option<f64>,
    pub co_delta: Option<f64>,
    pub great_loc: Option<f64>,
    pub great: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

pub const METRIC_NAMES: [&str; 11] = [
    "date_em1",
    "date_em5",
    "date_ef1",
    "delta",
    "great_date",
    "loc_em1",
    "loc_em5",
    "loc_ef1",
    "co_delta",
    "great_loc",
    "great",
];

impl QueryMetrics {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 11] {
        [
            self.date_em1,
            self.date_em5,
            self.date_ef1,
            self.delta,
            self.great_date,
            self.loc_em1,
            self.loc_em5,
            self.loc_ef1,
            self.co_delta,
            self.great_loc,
            self.great,
        ]
    }
}

/// Geocodes a location through its longest known suffix.
fn point_of(loc: &HierLocation, gazetteer: &Gazetteer) -> Option<GeoPoint> {
    gazetteer.geocode(&loc.components().join(", "))
}

pub fn evaluate_query(image: &ImageRecord, preds: &Predictions, gazetteer: &Gazetteer, cfg: &MetricsConfig) -> QueryMetrics {
    let mut m = QueryMetrics {
        image_id: image.id.clone(),
        ..Default::default()
    };

    match (&image.gt_date, preds.dates.first()) {
        (None, _) => m.skipped.push(SKIP_NO_GT_DATE.into()),
        (Some(_), None) => m.skipped.push(SKIP_NO_DATE_PREDICTION.into()),
        (Some(gt), Some(top)) => {
            m.date_em1 = Some(em_at_k_dates(&preds.dates, gt, 1));
            m.date_em5 = Some(em_at_k_dates(&preds.dates, gt, 5));
            m.date_ef1 = Some(date_example_f1(top, gt));
            m.delta = Some(delta_year_with(top, gt, cfg.delta_form));
            m.great_date = Some(great_date(top, gt, &cfg.thresholds, &cfg.date_weights));
        }
    }

    match (HierLocation::parse(&image.gt_location), preds.locations.first()) {
        (Err(_), _) => m.skipped.push(SKIP_NO_GT_LOCATION.into()),
        (Ok(_), None) => m.skipped.push(SKIP_NO_LOCATION_PREDICTION.into()),
        (Ok(gt), Some(top)) => {
            let gt_x = gt.expanded(gazetteer);
            let preds_x: Vec<HierLocation> = preds.locations.iter().map(|p| p.expanded(gazetteer)).collect();
            m.loc_em1 = Some(em_at_k_locations(&preds_x, &gt_x, 1));
            m.loc_em5 = Some(em_at_k_locations(&preds_x, &gt_x, 5));
            m.loc_ef1 = Some(example_f1(&preds_x[0], &gt_x));
            let gt_point = image.gt_coordinates.or_else(|| point_of(&gt, gazetteer));
            match (point_of(top, gazetteer), gt_point) {
                (_, None) => m.skipped.push(SKIP_GT_GEOCODE_MISS.into()),
                (None, _) => m.skipped.push(SKIP_PRED_GEOCODE_MISS.into()),
                (Some(p), Some(g)) => {
                    m.co_delta = Some(co_delta_with(p, g, cfg.co_delta_form));
                    m.great_loc = Some(great_loc(p, g));
                }
            }
        }
    }

    if let (Some(d), Some(l)) = (m.great_date, m.great_loc) {
        m.great = Some(cfg.great(d, l));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    /// Mean over the queries where the metric was computed.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_queries: usize,
    /// Set when no queries were evaluated.
    pub empty: bool,
    pub summary: Vec<MetricSummary>,
    pub skipped: BTreeMap<String, usize>,
    pub queries: Vec<QueryMetrics>,
}

#[derive(Serialize)]
struct AggregateRecord<'a> {
    aggregate: bool,
    num_queries: usize,
    empty: bool,
    summary: &'a [MetricSummary],
    skipped: &'a BTreeMap<String, usize>,
}

impl MetricsReport {
    /// Means accumulate in query order.
    pub fn aggregate(queries: Vec<QueryMetrics>) -> Self {
        let mut sums = [0.0f64; 11];
        let mut counts = [0usize; 11];
        let mut skipped = BTreeMap::new();
        for q in &queries {
            for (i, v) in q.values().iter().enumerate() {
                if let Some(v) = v {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
            for s in &q.skipped {
                *skipped.entry(s.clone()).or_insert(0) += 1;
            }
        }
        let summary = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| MetricSummary {
                name: name.to_string(),
                mean: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
                count: counts[i],
            })
            .collect();
        MetricsReport {
            num_queries: queries.len(),
            empty: queries.is_empty(),
            summary,
            skipped,
            queries,
        }
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.name == name).and_then(|s| s.mean)
    }

    /// One record per query followed by a single aggregate record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            out.push_str(&serde_json::to_string(q).expect("metrics serialize"));
            out.push('\n');
        }
        let agg = AggregateRecord {
            aggregate: true,
            num_queries: self.num_queries,
            empty: self.empty,
            summary: &self.summary,
            skipped: &self.skipped,
        };
        out.push_str(&serde_json::to_string(&agg).expect("metrics serialize"));
        out.push('\n');
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        crate::binio::write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        if self.empty {
            s.push_str("no queries evaluated\n");
            return s;
        }
        let _ = writeln!(s, "{:<12} {:>8} {:>6}", "metric", "mean", "n");
        for m in &self.summary {
            let mean = m.mean.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
            let _ = writeln!(s, "{:<12} {:>8} {:>6}", m.name, mean, m.count);
        }
        let _ = writeln!(s, "queries: {}", self.num_queries);
        for (reason, n) in &self.skipped {
            let _ = writeln!(s, "skipped ({reason}): {n}");
        }
        s
    }
}
