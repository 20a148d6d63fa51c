//! Embedding manifests: the line-delimited job description handed to the
//! external embedder, plus a seeded stand-in embedder for offline runs.
//!
//! Each line is `{"id": ..., "kind": "image"|"text", "payload": ...}` where
//! the payload is an image path or URL, or the text to embed. The embedder
//! answers with an NREC matrix whose row ids are the manifest ids.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::embedstore::{normalize_in_place, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: EntryKind,
    pub payload: String,
}

impl ManifestEntry {
    pub fn text(id: impl Into<String>, payload: impl Into<String>) -> Self {
        ManifestEntry {
            id: id.into(),
            kind: EntryKind::Text,
            payload: payload.into(),
        }
    }

    pub fn image(id: impl Into<String>, payload: impl Into<String>) -> Self {
        ManifestEntry {
            id: id.into(),
            kind: EntryKind::Image,
            payload: payload.into(),
        }
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::invalid("manifest entry with empty id"));
        }
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate manifest id `{id}`")));
        }
    }
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    check_unique(entries.iter().map(|e| e.id.as_str()))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    check_unique(entries.iter().map(|e| e.id.as_str()))?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entry serializes");
        writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pseudo-random unit vector determined by (kind, payload, seed) alone, so
/// equal payloads get equal rows wherever they sit in a manifest.
pub fn fake_embedding(kind: EntryKind, payload: &str, dim: usize, seed: u64) -> Vec<f32> {
    let tag = match kind {
        EntryKind::Image => 0x1,
        EntryKind::Text => 0x2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(xxh3_64(payload.as_bytes()) ^ seed.rotate_left(17) ^ tag);
    loop {
        let mut v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

/// Embeds a whole manifest with [`fake_embedding`], rows in manifest order.
pub fn embed_fake(entries: &[ManifestEntry], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::invalid("embedding dim must be positive"));
    }
    check_unique(entries.iter().map(|e| e.id.as_str()))?;
    let mut data = Vec::with_capacity(entries.len() * dim);
    for e in entries {
        data.extend(fake_embedding(e.kind, &e.payload, dim, seed));
    }
    EmbeddingMatrix::new(entries.iter().map(|e| e.id.clone()).collect(), dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::norm;

    #[test]
    fn manifest_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let es = vec![ManifestEntry::text("a#0", "Smoke over a harbor"), ManifestEntry::image("img1", "images/1.jpg")];
        write_manifest(&p, &es).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"id":"a#0","kind":"text","payload":"Smoke over a harbor"}"#);
        assert_eq!(read_manifest(&p).unwrap(), es);
        assert!(parse_manifest("{\"id\":\"x\",\"kind\":\"text\",\"payload\":\"\"}\n{\"id\":\"x\",\"kind\":\"image\",\"payload\":\"p\"}").is_err());
        assert!(matches!(parse_manifest("{\"id\":\"x\",\"kind\":\"audio\",\"payload\":\"\"}"), Err(Error::Record { line: 1, .. })));
    }

    #[test]
    fn fake_rows_are_unit_and_position_independent() {
        let a = vec![ManifestEntry::text("1", "x"), ManifestEntry::text("2", "y"), ManifestEntry::text("3", "x")];
        let m = embed_fake(&a, 16, 3).unwrap();
        for r in 0..3 {
            assert!((norm(m.row(r)) - 1.0).abs() < 1e-4);
        }
        assert_eq!(m.row(0), m.row(2));
        let b = embed_fake(&[ManifestEntry::text("9", "x")], 16, 3).unwrap();
        assert_eq!(b.row(0), m.row(0));
        assert_ne!(fake_embedding(EntryKind::Image, "x", 16, 3), m.row(0));
        assert_ne!(fake_embedding(EntryKind::Text, "x", 16, 4), m.row(0));
    }
}
