//! Per-frame statistics of an embedding sequence: mean, population standard
//! deviation, and the entropy (in nats) of the softmax over the embedding
//! dimension. The augmented sequence appends those three columns to every
//! frame, in that order.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::ingest::EmbeddingSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub mu: f64,
    pub sigma: f64,
    /// In `[0, ln D]`.
    pub entropy: f64,
}

pub fn frame_stats(e: &[f64]) -> Result<FrameStats> {
    let d = e.len();
    if d < 2 {
        return Err(Error::InvalidInput(format!("frame width {d}; need D >= 2")));
    }
    if let Some(i) = e.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at dim {i}")));
    }
    let n = d as f64;
    let mu = e.iter().sum::<f64>() / n;
    let sigma = (e.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();

    // log-softmax with max subtraction; p ln p is taken as 0 when p underflows.
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = e.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let entropy: f64 = -e
        .iter()
        .map(|v| {
            let log_p = v - max - log_z;
            let p = log_p.exp();
            if p == 0.0 {
                0.0
            } else {
                p * log_p
            }
        })
        .sum::<f64>();
    Ok(FrameStats {
        mu,
        sigma,
        entropy: entropy.clamp(0.0, n.ln()),
    })
}

/// `T × (D + 3)` rows `[E_t; mu_t; sigma_t; h_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeatureSequence {
    frames: Array2<f64>,
}

impl AugmentedFeatureSequence {
    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// Width of the original embedding, `D`.
    pub fn embed_dim(&self) -> usize {
        self.frames.ncols() - 3
    }
}

pub fn augment_sequence(e: &EmbeddingSequence) -> Result<AugmentedFeatureSequence> {
    let src = e.frames();
    let (t, d) = src.dim();
    let mut frames = Array2::zeros((t, d + 3));
    frames.slice_mut(s![.., ..d]).assign(src);
    for (row_in, mut row_out) in src.rows().into_iter().zip(frames.rows_mut()) {
        let st = frame_stats(&row_in.to_vec())?;
        row_out[d] = st.mu;
        row_out[d + 1] = st.sigma;
        row_out[d + 2] = st.entropy;
    }
    Ok(AugmentedFeatureSequence { frames })
}
