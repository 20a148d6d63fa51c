//! Great-circle distance, distance-based location scores, and the offline gazetteer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{location_components, normalize_strict};

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!("coordinates ({lat}, {lon}) out of range")));
        }
        Ok(GeoPoint { lat, lon })
    }
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Location half of GREAT: linear decay to zero at 1000 km.
pub fn great_loc_km(d_km: f64) -> f64 {
    (1.0 - d_km / 1000.0).max(0.0)
}

pub fn great_loc(pred: GeoPoint, gt: GeoPoint) -> f64 {
    great_loc_km(haversine_km(pred, gt))
}

/// Shape of the inverse-distance scores Δ and COΔ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseForm {
    /// `1 / (1 + x)`
    #[default]
    Inverse,
    /// `exp(-x)`
    Exponential,
}

impl InverseForm {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            InverseForm::Inverse => 1.0 / (1.0 + x),
            InverseForm::Exponential => (-x).exp(),
        }
    }
}

/// COΔ with distance measured in units of 1000 km.
pub fn co_delta_with(pred: GeoPoint, gt: GeoPoint, form: InverseForm) -> f64 {
    form.apply(haversine_km(pred, gt) / 1000.0)
}

pub fn co_delta(pred: GeoPoint, gt: GeoPoint) -> f64 {
    co_delta_with(pred, gt, InverseForm::Inverse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerRow {
    pub place: String,
    #[serde(default)]
    pub parent: String,
    #[serde(default)]
    pub continent: String,
    pub lat: f64,
    pub lon: f64,
}

/// Place names to coordinates and parent regions.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    rows: Vec<GazetteerRow>,
    by_name: HashMap<String, Vec<usize>>,
}

impl Gazetteer {
    pub fn new(rows: Vec<GazetteerRow>) -> Result<Self> {
        let mut by_name: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            GeoPoint::new(r.lat, r.lon)?;
            by_name.entry(normalize_strict(&r.place)).or_default().push(i);
        }
        Ok(Gazetteer { rows, by_name })
    }

    /// Reads a CSV with header `place,parent,continent,lat,lon`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<GazetteerRow>().enumerate() {
            rows.push(rec.map_err(|e| Error::Record {
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        Gazetteer::new(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn rows(&self) -> &[GazetteerRow] {
        &self.rows
    }

    fn lookup(&self, name: &str) -> &[usize] {
        self.by_name
            .get(&normalize_strict(name))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn is_known(&self, name: &str) -> bool {
        !self.lookup(name).is_empty()
    }

    /// Parent chain (nearest first) and the continent, as stored.
    fn ancestry(&self, row: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = row;
        let mut continent = self.rows[row].continent.clone();
        for _ in 0..16 {
            let parent = &self.rows[cur].parent;
            if parent.trim().is_empty() {
                break;
            }
            out.push(parent.clone());
            match self.lookup(parent).first() {
                Some(&p) => {
                    if !self.rows[p].continent.trim().is_empty() {
                        continent = self.rows[p].continent.clone();
                    }
                    cur = p;
                }
                None => break,
            }
        }
        if !continent.trim().is_empty() {
            out.push(continent);
        }
        out
    }

    /// Row for the most specific component whose stated ancestors agree with
    /// the gazetteer.
    fn resolve(&self, components: &[String]) -> Option<usize> {
        for start in 0..components.len() {
            let suffix = &components[start..];
            let rest: Vec<String> = suffix[1..]
                .iter()
                .filter(|c| self.is_known(c))
                .map(|c| normalize_strict(c))
                .collect();
            let hit = self.lookup(&suffix[0]).iter().copied().find(|&row| {
                let anc: Vec<String> = self.ancestry(row).iter().map(|a| normalize_strict(a)).collect();
                rest.iter().all(|c| anc.contains(c))
            });
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Longest-suffix lookup of a comma-separated location.
    pub fn geocode(&self, location: &str) -> Option<GeoPoint> {
        let comps = location_components(location);
        self.resolve(&comps)
            .map(|r| GeoPoint {
                lat: self.rows[r].lat,
                lon: self.rows[r].lon,
            })
    }

    /// Extends a child→parent list with the gazetteer's parents and continent
    /// of its coarsest component.
    pub fn expand(&self, components: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in components {
            if !out.iter().any(|o| normalize_strict(o) == normalize_strict(c)) {
                out.push(c.clone());
            }
        }
        let Some(last) = out.last().cloned() else {
            return out;
        };
        if let Some(row) = self.resolve(std::slice::from_ref(&last)) {
            for a in self.ancestry(row) {
                if !out.iter().any(|o| normalize_strict(o) == normalize_strict(&a)) {
                    out.push(a);
                }
            }
        }
        out
    }

    /// Number of known ancestors; `None` for unknown places.
    pub fn depth(&self, name: &str) -> Option<usize> {
        self.lookup(name).first().map(|&r| self.ancestry(r).len())
    }

    /// Orders keywords child→parent (deepest first); unknown keywords are
    /// treated as most specific. Stable.
    pub fn order_child_to_parent(&self, keywords: &[String]) -> Vec<String> {
        let mut v: Vec<(usize, &String)> = keywords
            .iter()
            .map(|k| (self.depth(k).unwrap_or(usize::MAX), k))
            .collect();
        v.sort_by(|a, b| b.0.cmp(&a.0));
        v.into_iter().map(|(_, k)| k.clone()).collect()
    }
}

pub fn geocode(location: &str, gazetteer: &Gazetteer) -> Option<GeoPoint> {
    gazetteer.geocode(location)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaz() -> Gazetteer {
        let row = |p: &str, par: &str, c: &str, lat, lon| GazetteerRow {
            place: p.into(),
            parent: par.into(),
            continent: c.into(),
            lat,
            lon,
        };
        Gazetteer::new(vec![
            row("Paris", "France", "Europe", 48.8566, 2.3522),
            row("France", "", "Europe", 46.2276, 2.2137),
            row("Texas", "United States", "North America", 31.0, -100.0),
            row("United States", "", "North America", 39.8, -98.6),
        ])
        .unwrap()
    }

    #[test]
    fn haversine_basics() {
        let p = GeoPoint::new(10.0, 20.0).unwrap();
        assert_eq!(haversine_km(p, p), 0.0);
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = GeoPoint::new(0.0, 180.0).unwrap();
        assert!((haversine_km(a, b) - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((std::f64::consts::PI * EARTH_RADIUS_KM - 20015.1).abs() < 0.1);
    }

    #[test]
    fn great_loc_boundaries() {
        assert_eq!(great_loc_km(0.0), 1.0);
        assert_eq!(great_loc_km(1000.0), 0.0);
        assert_eq!(great_loc_km(5000.0), 0.0);
        assert!((great_loc_km(343.6) - 0.6564).abs() < 1e-12);
    }

    #[test]
    fn inverse_forms() {
        assert_eq!(InverseForm::Inverse.apply(0.0), 1.0);
        assert_eq!(InverseForm::Inverse.apply(1.0), 0.5);
        assert!((InverseForm::Inverse.apply(9.0) - 0.1).abs() < 1e-15);
        assert_eq!(InverseForm::Exponential.apply(0.0), 1.0);
    }

    #[test]
    fn geocode_longest_suffix() {
        let g = gaz();
        assert_eq!(g.geocode("Paris, France").unwrap().lat, 48.8566);
        assert_eq!(g.geocode("France").unwrap().lat, 46.2276);
        assert!(g.geocode("Atlantis").is_none());
        // inconsistent parent: falls back to the coarser component
        assert_eq!(g.geocode("Paris, Texas").unwrap().lat, 31.0);
        // unknown intermediate component is ignored
        assert_eq!(g.geocode("Paris, Ile-de-France, France").unwrap().lat, 48.8566);
    }

    #[test]
    fn expand_adds_parents_and_continent() {
        let g = gaz();
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(g.expand(&s(&["Paris"])), s(&["Paris", "France", "Europe"]));
        assert_eq!(g.expand(&s(&["Paris", "France"])), s(&["Paris", "France", "Europe"]));
        assert_eq!(g.expand(&s(&["Gotham"])), s(&["Gotham"]));
        assert_eq!(
            g.order_child_to_parent(&s(&["France", "Paris"])),
            s(&["Paris", "France"])
        );
    }
}
