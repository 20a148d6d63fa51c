//! Symmetric in-batch contrastive loss with analytic gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    /// `B × d`, row-major, gradient w.r.t. the image vectors.
    pub grad_images: Vec<f64>,
    /// `B × d`, row-major, gradient w.r.t. the caption vectors.
    pub grad_captions: Vec<f64>,
}

fn log_softmax_at(logits: impl Iterator<Item = f64> + Clone, target: usize) -> (f64, Vec<f64>) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    (probs[target].ln(), probs)
}

/// Mean of the image→caption and caption→image cross-entropies over
/// `S = images · captionsᵀ / τ`, with matching rows as targets.
pub fn info_nce_loss(images: &[f64], captions: &[f64], dim: usize, temperature: f64) -> Result<InfoNce> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if dim == 0 || images.len() % dim != 0 || images.len() != captions.len() || images.is_empty() {
        return Err(Error::invalid(format!(
            "loss inputs must be two non-empty B×{dim} matrices, got {} and {} values",
            images.len(),
            captions.len()
        )));
    }
    let b = images.len() / dim;
    let mut s = vec![0.0f64; b * b];
    for i in 0..b {
        let ii = &images[i * dim..(i + 1) * dim];
        for j in 0..b {
            let cj = &captions[j * dim..(j + 1) * dim];
            s[i * b + j] = ii.iter().zip(cj).map(|(x, y)| x * y).sum::<f64>() / temperature;
        }
    }

    // g[i][j] = dL/dS_ij where S already includes 1/τ.
    let mut g = vec![0.0f64; b * b];
    let scale = 0.5 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let (lp, p) = log_softmax_at((0..b).map(|j| s[i * b + j]), i);
        loss -= lp;
        for j in 0..b {
            g[i * b + j] += scale * (p[j] - f64::from(u8::from(i == j)));
        }
    }
    for j in 0..b {
        let (lp, q) = log_softmax_at((0..b).map(|i| s[i * b + j]), j);
        loss -= lp;
        for i in 0..b {
            g[i * b + j] += scale * (q[i] - f64::from(u8::from(i == j)));
        }
    }
    loss *= scale;

    let mut grad_images = vec![0.0f64; b * dim];
    let mut grad_captions = vec![0.0f64; b * dim];
    for i in 0..b {
        for j in 0..b {
            let gij = g[i * b + j] / temperature;
            if gij == 0.0 {
                continue;
            }
            let ci = &captions[j * dim..(j + 1) * dim];
            let ii = &images[i * dim..(i + 1) * dim];
            for k in 0..dim {
                grad_images[i * dim + k] += gij * ci[k];
                grad_captions[j * dim + k] += gij * ii[k];
            }
        }
    }
    Ok(InfoNce {
        loss,
        grad_images,
        grad_captions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let r = info_nce_loss(&[1.0, 0.0], &[0.0, 1.0], 2, 0.07).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad_images.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_orthogonal_pairs() {
        let e = [1.0, 0.0, 0.0, 1.0];
        let r = info_nce_loss(&e, &e, 2, 1.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((r.loss - want).abs() < 1e-12);
        assert!((want - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        assert!(info_nce_loss(&[1.0], &[1.0], 1, 0.0).is_err());
        assert!(info_nce_loss(&[1.0], &[1.0], 1, -1.0).is_err());
        assert!(info_nce_loss(&[1.0, 0.0], &[1.0], 1, 1.0).is_err());
        assert!(info_nce_loss(&[], &[], 1, 1.0).is_err());
    }
}
