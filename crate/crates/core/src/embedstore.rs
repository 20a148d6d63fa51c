//! Unit-normalized embedding matrices, the `NREC` file format, and exact
//! top-K cosine retrieval over caption vectors.
//!
//! # File layout
//!
//! All integers little-endian:
//!
//! | field    | type                                   |
//! |----------|----------------------------------------|
//! | magic    | `b"NREC"`                              |
//! | version  | `u16` = 1                              |
//! | dim      | `u32`                                  |
//! | rows     | `u64`                                  |
//! | payload  | `rows * dim` × `f32`, row-major        |
//! | ids      | `rows` × (`u32` byte length, UTF-8)    |
//! | checksum | `u64` XXH3-64, seed 0, over all prior bytes |
//!
//! Caption rows use ids of the form `articleId#captionIdx`; any other id is
//! treated as caption 0 of an article with that id.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const NREC_MAGIC: &[u8; 4] = b"NREC";
pub const NREC_VERSION: u16 = 1;

/// Rows whose L2 norm deviates from 1 by more than this are renormalized on load.
pub const NORM_TOLERANCE: f64 = 1e-4;

const SCORE_CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix whose rows must already be unit-norm.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self::assemble(ids, dim, data)?;
        for r in 0..m.rows() {
            let n = norm(m.row(r));
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "row {r} ({}) has norm {n:.6}, expected 1",
                    m.ids[r]
                )));
            }
        }
        Ok(m)
    }

    /// Builds a matrix from arbitrary non-zero rows, L2-normalizing each.
    pub fn from_unnormalized(ids: Vec<String>, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim > 0 {
            for (r, row) in data.chunks_mut(dim).enumerate() {
                if !normalize_in_place(row) {
                    return Err(Error::invalid(format!("row {r} has zero or non-finite norm")));
                }
            }
        }
        Self::assemble(ids, dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        EmbeddingMatrix {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn assemble(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "payload has {} floats, expected {} rows x {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in row {}", i / dim)));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate embedding id `{id}`")));
            }
        }
        Ok(EmbeddingMatrix {
            ids,
            dim,
            data,
            index,
        })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|r| self.row(r))
    }

    /// Keeps rows whose id satisfies `keep`, preserving order.
    pub fn filter_rows(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (r, id) in self.ids.iter().enumerate() {
            if keep(id) {
                ids.push(id.clone());
                data.extend_from_slice(self.row(r));
            }
        }
        Self::assemble(ids, self.dim, data).expect("subset of a valid matrix is valid")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(NREC_MAGIC, NREC_VERSION);
        let id_bytes: usize = self.ids.iter().map(|s| 4 + s.len()).sum();
        w.reserve(12 + self.data.len() * 4 + id_bytes + 8);
        w.u32(self.dim as u32);
        w.u64(self.rows() as u64);
        w.f32s(&self.data);
        for id in &self.ids {
            w.str(id);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, NREC_MAGIC, NREC_VERSION)?;
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::format(6, "dim must be positive"));
        }
        let rows_at = r.offset();
        let rows = r.u64("row count")?;
        let floats = rows
            .checked_mul(dim as u64)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::format(rows_at, format!("row count {rows} overflows")))?;
        let payload_at = r.offset();
        let shortfall = |have: u64| {
            Error::format(
                payload_at,
                format!(
                    "truncated payload: header declares {rows} rows of dim {dim}, file holds {have} (short by {} rows)",
                    rows - have
                ),
            )
        };
        if r.remaining() < floats * 4 {
            let have = rows_that_fit(&r, payload_at, dim, rows).unwrap_or((r.remaining() / (4 * dim)) as u64);
            return Err(shortfall(have));
        }
        let mut data = r.f32s(floats, "payload")?;
        let mut ids = Vec::with_capacity(rows as usize);
        for i in 0..rows as usize {
            let at = r.offset();
            match r.str("id") {
                Ok(id) => ids.push(id),
                Err(_) => {
                    if let Some(have) = rows_that_fit(&r, payload_at, dim, rows) {
                        return Err(shortfall(have));
                    }
                    return Err(Error::format(
                        at,
                        format!("id block ends after {i} ids, header declares {rows} rows"),
                    ));
                }
            }
        }
        if r.remaining() != 0 {
            if let Some(have) = rows_that_fit(&r, payload_at, dim, rows) {
                return Err(shortfall(have));
            }
        }
        r.expect_end()?;
        r.verify_checksum(bytes)?;

        for (i, row) in data.chunks_mut(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    payload_at + (i * dim * 4) as u64,
                    format!("non-finite value in row {i}"),
                ));
            }
            let n = norm(row);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                if !normalize_in_place(row) {
                    return Err(Error::format(
                        payload_at + (i * dim * 4) as u64,
                        format!("row {i} ({}) is a zero vector", ids[i]),
                    ));
                }
                log::warn!("row {i} ({}) had norm {n:.6}; renormalized", ids[i]);
            }
        }
        Self::assemble(ids, dim, data).map_err(|e| Error::format(0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }
}

/// Largest row count below `declared` whose payload and id block exactly fill
/// the body, used to report a short payload precisely.
fn rows_that_fit(r: &ByteReader<'_>, payload_at: u64, dim: usize, declared: u64) -> Option<u64> {
    let mut probe = r.clone();
    probe.seek(payload_at);
    let available = probe.remaining() as u64;
    let max = declared.saturating_sub(1).min(available / (4 * dim as u64));
    (0..=max).rev().take(4096).find(|&n| {
        let mut c = r.clone();
        c.seek(payload_at + n * dim as u64 * 4);
        (0..n).all(|_| c.str("id").is_ok()) && c.remaining() == 0
    })
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Scales `v` to unit length; returns false (leaving `v` untouched) for zero or
/// non-finite vectors.
pub fn normalize_in_place(v: &mut [f32]) -> bool {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

/// Dot product with f64 accumulation over four interleaved lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] as f64 * y[0] as f64;
        acc[1] += x[1] as f64 * y[1] as f64;
        acc[2] += x[2] as f64 * y[2] as f64;
        acc[3] += x[3] as f64 * y[3] as f64;
    }
    let mut tail = 0f64;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Splits `articleId#captionIdx`; ids without a numeric suffix are caption 0.
pub fn split_caption_id(id: &str) -> (&str, u32) {
    match id.rsplit_once('#') {
        Some((article, idx)) if !article.is_empty() => match idx.parse::<u32>() {
            Ok(i) => (article, i),
            Err(_) => (id, 0),
        },
        _ => (id, 0),
    }
}

pub fn caption_row_id(article_id: &str, caption_idx: usize) -> String {
    format!("{article_id}#{caption_idx}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub article_id: String,
    pub caption_idx: u32,
    pub score: f32,
}

/// Descending score, then ascending article id, then ascending caption index.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.article_id.cmp(&b.article_id))
        .then_with(|| a.caption_idx.cmp(&b.caption_idx))
}

/// A caption matrix with rows grouped by article, ready for article-level search.
#[derive(Debug, Clone)]
pub struct CaptionIndex {
    matrix: EmbeddingMatrix,
    /// Sorted ascending, so article index order equals id order.
    article_ids: Vec<String>,
    row_article: Vec<u32>,
    row_caption: Vec<u32>,
    article_rows: Vec<Vec<u32>>,
}

impl CaptionIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let mut article_ids: Vec<String> = matrix
            .ids()
            .iter()
            .map(|id| split_caption_id(id).0.to_owned())
            .collect();
        article_ids.sort();
        article_ids.dedup();
        let pos: HashMap<&str, u32> = article_ids
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i as u32))
            .collect();
        let mut row_article = Vec::with_capacity(matrix.rows());
        let mut row_caption = Vec::with_capacity(matrix.rows());
        let mut article_rows = vec![Vec::new(); article_ids.len()];
        for (r, id) in matrix.ids().iter().enumerate() {
            let (a, c) = split_caption_id(id);
            let ai = pos[a];
            row_article.push(ai);
            row_caption.push(c);
            article_rows[ai as usize].push(r as u32);
        }
        CaptionIndex {
            matrix,
            article_ids,
            row_article,
            row_caption,
            article_rows,
        }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn article_ids(&self) -> &[String] {
        &self.article_ids
    }

    pub fn num_articles(&self) -> usize {
        self.article_ids.len()
    }

    pub fn article_position(&self, article_id: &str) -> Option<usize> {
        self.article_ids
            .binary_search_by(|a| a.as_str().cmp(article_id))
            .ok()
    }

    /// Matrix rows belonging to the article at `article_pos`.
    pub fn rows_of(&self, article_pos: usize) -> &[u32] {
        &self.article_rows[article_pos]
    }

    pub fn row_article(&self, row: usize) -> usize {
        self.row_article[row] as usize
    }

    /// Same row grouping, new vectors (e.g. after a projection head).
    pub fn with_matrix(&self, matrix: EmbeddingMatrix) -> Result<Self> {
        if matrix.ids() != self.matrix.ids() {
            return Err(Error::invalid("replacement matrix must keep row ids and order"));
        }
        Ok(CaptionIndex {
            matrix,
            article_ids: self.article_ids.clone(),
            row_article: self.row_article.clone(),
            row_caption: self.row_caption.clone(),
            article_rows: self.article_rows.clone(),
        })
    }

    /// Keeps only the captions of articles accepted by `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let m = self
            .matrix
            .filter_rows(|id| keep(split_caption_id(id).0));
        CaptionIndex::new(m)
    }

    /// Cosine score of every row against `query`.
    pub fn score_rows(&self, query: &[f32], exec: Execution) -> Result<Vec<f32>> {
        if query.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: query.len(),
            });
        }
        let dim = self.dim();
        let data = self.matrix.data();
        let mut scores = vec![0f32; self.matrix.rows()];
        exec.for_each_chunk_mut(&mut scores, SCORE_CHUNK_ROWS, |ci, out| {
            let base = ci * SCORE_CHUNK_ROWS;
            for (j, s) in out.iter_mut().enumerate() {
                let r = base + j;
                *s = dot(query, &data[r * dim..(r + 1) * dim]) as f32;
            }
        });
        Ok(scores)
    }

    /// Article-level top-K: each article scored by its best caption, listed once.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.top_k_with(query, k, Execution::default())
    }

    pub fn top_k_with(&self, query: &[f32], k: usize, exec: Execution) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let scores = self.score_rows(query, exec)?;
        Ok(self.select(&scores, k))
    }

    /// One top-K list per query, queries spread across workers.
    pub fn top_k_batch(
        &self,
        queries: &[&[f32]],
        k: usize,
        exec: Execution,
    ) -> Result<Vec<Vec<SearchHit>>> {
        exec.map(queries.len(), |i| {
            self.top_k_with(queries[i], k, Execution::Sequential)
        })
        .into_iter()
        .collect()
    }

    fn select(&self, scores: &[f32], k: usize) -> Vec<SearchHit> {
        // best (score, caption) per article; ties keep the lower caption index
        let mut best: Vec<(f32, u32)> = vec![(f32::NEG_INFINITY, u32::MAX); self.article_ids.len()];
        for (r, &s) in scores.iter().enumerate() {
            let b = &mut best[self.row_article[r] as usize];
            let c = self.row_caption[r];
            if s > b.0 || (s == b.0 && c < b.1) {
                *b = (s, c);
            }
        }
        let mut cand: Vec<u32> = (0..best.len() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            best[*b as usize]
                .0
                .total_cmp(&best[*a as usize].0)
                .then_with(|| a.cmp(b))
        };
        let k = k.min(cand.len());
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        cand.into_iter()
            .map(|a| SearchHit {
                article_id: self.article_ids[a as usize].clone(),
                caption_idx: best[a as usize].1,
                score: best[a as usize].0,
            })
            .collect()
    }
}

/// Exact top-K over a caption matrix.
pub fn top_k(query: &[f32], matrix: &EmbeddingMatrix, k: usize) -> Result<Vec<SearchHit>> {
    CaptionIndex::new(matrix.clone()).top_k(query, k)
}
