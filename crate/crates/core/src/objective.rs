//! Multitask objective: a γ-weighted sum over the four targets of an
//! utterance-level squared error plus an α-weighted mean frame-level squared
//! error against the same utterance label.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::PredictionBundle;

/// Prediction targets, in loss-weight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Intelligibility,
    CerWhisper,
    CerGoogle,
    Stoi,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::Intelligibility,
        Target::CerWhisper,
        Target::CerGoogle,
        Target::Stoi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Intelligibility => "intelligibility",
            Target::CerWhisper => "cer_whisper",
            Target::CerGoogle => "cer_google",
            Target::Stoi => "stoi",
        }
    }

    /// Parameter-block prefix of the target's prediction branch.
    pub fn branch_key(self) -> &'static str {
        match self {
            Target::Intelligibility => "int",
            Target::CerWhisper => "cer_ws",
            Target::CerGoogle => "cer_goo",
            Target::Stoi => "stoi",
        }
    }

    pub fn from_name(name: &str) -> Option<Target> {
        Target::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels for one utterance, CERs already inverted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScores {
    pub intelligibility: f64,
    pub cer_whisper_inv: f64,
    pub cer_google_inv: f64,
    pub stoi: f64,
}

impl TargetScores {
    pub fn get(&self, t: Target) -> f64 {
        match t {
            Target::Intelligibility => self.intelligibility,
            Target::CerWhisper => self.cer_whisper_inv,
            Target::CerGoogle => self.cer_google_inv,
            Target::Stoi => self.stoi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Intelligibility, CER-Whisper, CER-Google, STOI.
    pub gamma: [f64; 4],
    /// Weight α of the frame-level term.
    pub frame_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: [1.0, 1.0, 1.0, 5.0],
            frame_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self
            .gamma
            .iter()
            .chain(std::iter::once(&self.frame_weight))
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "loss weights must be finite and >= 0 (gamma {:?}, alpha {})",
                self.gamma, self.frame_weight
            )));
        }
        Ok(())
    }
}

/// `(u - y)^2 + α · mean_t (f_t - y)^2`.
pub fn metric_loss(frame_scores: &[f64], utterance_score: f64, label: f64, alpha: f64) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::InvalidInput("metric loss over zero frames".into()));
    }
    let frame_term = frame_scores.iter().map(|f| (f - label).powi(2)).sum::<f64>()
        / frame_scores.len() as f64;
    Ok((utterance_score - label).powi(2) + alpha * frame_term)
}

/// Gradients of [`metric_loss`] with respect to each frame score and the
/// utterance score, treated as independent inputs.
pub fn metric_loss_grad(
    frame_scores: &[f64],
    utterance_score: f64,
    label: f64,
    alpha: f64,
) -> (Vec<f64>, f64) {
    let scale = 2.0 * alpha / frame_scores.len() as f64;
    (
        frame_scores.iter().map(|f| scale * (f - label)).collect(),
        2.0 * (utterance_score - label),
    )
}

pub fn total_loss(bundle: &PredictionBundle, targets: &TargetScores, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Target::ALL.iter().try_fold(0.0, |acc, &t| {
        let p = bundle.get(t);
        Ok(acc + w.gamma[t.index()] * metric_loss(&p.frame_scores, p.utterance_score, targets.get(t), w.frame_weight)?)
    })
}

/// Mean of [`total_loss`] over a batch.
pub fn batch_loss(items: &[(PredictionBundle, TargetScores)], w: &LossWeights) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let sum = items
        .iter()
        .map(|(b, t)| total_loss(b, t, w))
        .sum::<Result<f64>>()?;
    Ok(sum / items.len() as f64)
}
