//! Linear projection heads and their checkpoint file.

use std::path::Path;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::embedstore::{normalize_in_place, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const HEAD_MAGIC: &[u8; 4] = b"NRHD";
pub const HEAD_VERSION: u16 = 1;

/// `y = normalize(x·W + b)` with `W` stored row-major as `dim_in × dim_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    dim_in: usize,
    dim_out: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl ProjectionHead {
    pub fn new(dim_in: usize, dim_out: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::invalid("projection head dims must be positive"));
        }
        if weight.len() != dim_in * dim_out || bias.len() != dim_out {
            return Err(Error::invalid(format!(
                "projection head {dim_in}x{dim_out} needs {} weights and {dim_out} biases, got {} and {}",
                dim_in * dim_out,
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("projection head has non-finite entries"));
        }
        Ok(ProjectionHead {
            dim_in,
            dim_out,
            weight,
            bias,
        })
    }

    /// Identity on the first `min(dim_in, dim_out)` coordinates, zero bias.
    pub fn identity(dim_in: usize, dim_out: usize) -> Self {
        let mut weight = vec![0.0; dim_in * dim_out];
        for i in 0..dim_in.min(dim_out) {
            weight[i * dim_out + i] = 1.0;
        }
        ProjectionHead {
            dim_in,
            dim_out,
            weight,
            bias: vec![0.0; dim_out],
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Unnormalized output, accumulated in f64.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim_in {
            return Err(Error::DimMismatch {
                expected: self.dim_in,
                actual: x.len(),
            });
        }
        let mut y: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.dim_out..(i + 1) * self.dim_out];
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += xi as f64 * w as f64;
            }
        }
        Ok(y)
    }

    /// Unit-norm projection. A zero output stays zero.
    pub fn project(&self, x: &[f32]) -> Result<Vec<f32>> {
        let mut out: Vec<f32> = self.forward(x)?.into_iter().map(|v| v as f32).collect();
        normalize_in_place(&mut out);
        Ok(out)
    }

    /// Projects every row, keeping ids.
    pub fn project_matrix(&self, m: &EmbeddingMatrix, exec: Execution) -> Result<EmbeddingMatrix> {
        if m.dim() != self.dim_in {
            return Err(Error::DimMismatch {
                expected: self.dim_in,
                actual: m.dim(),
            });
        }
        let mut data = vec![0.0f32; m.rows() * self.dim_out];
        exec.for_each_chunk_mut(&mut data, self.dim_out * 256, |ci, chunk| {
            for (j, out) in chunk.chunks_mut(self.dim_out).enumerate() {
                let y = self.project(m.row(ci * 256 + j)).expect("dims checked");
                out.copy_from_slice(&y);
            }
        });
        EmbeddingMatrix::from_unnormalized(m.ids().to_vec(), self.dim_out, data)
    }
}

/// Image-side and text-side heads trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPair {
    pub image: ProjectionHead,
    pub text: ProjectionHead,
}

impl HeadPair {
    pub fn identity(image_dim: usize, text_dim: usize, dim_out: usize) -> Self {
        HeadPair {
            image: ProjectionHead::identity(image_dim, dim_out),
            text: ProjectionHead::identity(text_dim, dim_out),
        }
    }

    pub fn new(image: ProjectionHead, text: ProjectionHead) -> Result<Self> {
        if image.dim_out != text.dim_out {
            return Err(Error::DimMismatch {
                expected: image.dim_out,
                actual: text.dim_out,
            });
        }
        Ok(HeadPair { image, text })
    }

    pub fn to_bytes(&self, config_hash: u64) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(HEAD_MAGIC, HEAD_VERSION);
        w.u64(config_hash);
        for h in [&self.image, &self.text] {
            w.u32(h.dim_in as u32);
            w.u32(h.dim_out as u32);
            w.f32s(&h.weight);
            w.f32s(&h.bias);
        }
        w.finish()
    }

    /// Returns the heads and the config hash they were trained under.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        let mut r = ByteReader::open(bytes, HEAD_MAGIC, HEAD_VERSION)?;
        let hash = r.u64("config hash")?;
        let mut heads = Vec::with_capacity(2);
        for side in ["image", "text"] {
            let at = r.offset();
            let dim_in = r.u32("dim_in")? as usize;
            let dim_out = r.u32("dim_out")? as usize;
            let n = dim_in
                .checked_mul(dim_out)
                .ok_or_else(|| Error::format(at, format!("{side} head dims overflow")))?;
            if r.remaining() < n.saturating_mul(4) {
                return Err(Error::format(
                    r.offset(),
                    format!("truncated {side} head: {dim_in}x{dim_out} weights need {} bytes, {} available", n * 4, r.remaining()),
                ));
            }
            let weight = r.f32s(n, "weights")?;
            let bias = r.f32s(dim_out, "bias")?;
            heads.push(
                ProjectionHead::new(dim_in, dim_out, weight, bias)
                    .map_err(|e| Error::format(at, format!("{side} head: {e}")))?,
            );
        }
        r.expect_end()?;
        r.verify_checksum(bytes)?;
        let text = heads.pop().expect("two heads");
        let image = heads.pop().expect("two heads");
        let pair = HeadPair::new(image, text).map_err(|e| Error::format(6, e.to_string()))?;
        Ok((pair, hash))
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        binio::write_file(path, &self.to_bytes(config_hash))
    }

    /// Loads and, when `expected_hash` is given, rejects checkpoints trained
    /// under a different configuration.
    pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Self> {
        let (pair, found) = Self::from_bytes(&binio::read_file(path)?)?;
        binio::check_hash(path, expected_hash, found)?;
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> HeadPair {
        let w: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let image = ProjectionHead::new(4, 3, w.clone(), vec![0.1, 0.2, 0.3]).unwrap();
        let text = ProjectionHead::new(4, 3, w.iter().map(|v| -v).collect(), vec![0.0; 3]).unwrap();
        HeadPair::new(image, text).unwrap()
    }

    #[test]
    fn identity_projection_preserves_unit_vectors() {
        let h = ProjectionHead::identity(4, 4);
        let x = [0.5f32, 0.5, 0.5, 0.5];
        assert_eq!(h.project(&x).unwrap(), x.to_vec());
        let t = ProjectionHead::identity(4, 2);
        assert_eq!(t.project(&[0.6, 0.8, 0.0, 0.0]).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let h = ProjectionHead::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]).unwrap();
        assert_eq!(h.forward(&[1.0, 1.0]).unwrap(), vec![4.5, 5.5]);
        assert!(matches!(h.forward(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let p = pair();
        let bytes = p.to_bytes(0xabc);
        let (back, hash) = HeadPair::from_bytes(&bytes).unwrap();
        assert_eq!(hash, 0xabc);
        assert_eq!(back, p);
        assert_eq!(back.to_bytes(0xabc), bytes);
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let bytes = pair().to_bytes(1);
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40;
        assert!(matches!(HeadPair::from_bytes(&flipped), Err(Error::Format { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(HeadPair::from_bytes(&magic), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(HeadPair::from_bytes(&bytes[..40]), Err(Error::Format { .. })));
    }

    #[test]
    fn stale_hash_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heads.nrhd");
        pair().save(&path, 7).unwrap();
        assert!(HeadPair::load(&path, Some(7)).is_ok());
        assert!(HeadPair::load(&path, None).is_ok());
        assert!(matches!(HeadPair::load(&path, Some(8)), Err(Error::StaleArtifact { found: 7, .. })));
    }
}
