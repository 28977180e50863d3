//! Corpus loading: manifests, embedding files, waveforms, and synthetic data.

mod embedding;
mod manifest;
mod synth;
mod wav;

pub use embedding::{
    decode_embedding, encode_embedding, load_embedding, write_embedding, EmbeddingSequence,
    EMB1_MAGIC, EMB1_VERSION,
};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry, Split};
pub use synth::{synth_dataset, SynthConfig, SynthSummary};
pub use wav::{load_waveform, write_waveform, Waveform, SAMPLE_RATE};

use crate::error::{Error, Result};

/// Map a raw character error rate to a higher-is-better score, `max(0, 1 - cer)`.
pub fn invert_cer(cer_raw: f64) -> Result<f64> {
    if !cer_raw.is_finite() || cer_raw < 0.0 {
        return Err(Error::InvalidInput(format!(
            "CER must be finite and >= 0, got {cer_raw}"
        )));
    }
    Ok((1.0 - cer_raw).max(0.0))
}
