use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz waveform with finite samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Waveform("empty waveform".into()));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Waveform(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let diag = |msg: String| Error::Waveform(format!("{}: {msg}", path.display()));
    let mut reader = hound::WavReader::open(path).map_err(|e| diag(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(diag(format!("{} channels; only mono is accepted", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(diag(format!(
            "sample rate {} Hz; only {SAMPLE_RATE} Hz is accepted",
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(diag(format!(
            "{:?} {}-bit samples; only 16-bit PCM is accepted",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| diag(e.to_string()))?;
    Waveform::new(samples).map_err(|e| diag(e.to_string()))
}

/// Write 16-bit PCM mono. Samples are rounded to the nearest code and clipped.
pub fn write_waveform(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Waveform(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        let code = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(code).map_err(io)?;
    }
    writer.finalize().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) / 64.0).collect();
        write_waveform(&path, &samples).unwrap();
        let w = load_waveform(&path).unwrap();
        assert_eq!(w.samples(), samples.as_slice());
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        let dir = tempfile::tempdir().unwrap();
        for (channels, rate, what) in [(2u16, 16_000u32, "mono"), (1, 8_000, "16000")] {
            let path = dir.path().join(format!("{channels}_{rate}.wav"));
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: 16,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(&path, spec).unwrap();
            for _ in 0..8 {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
            let msg = load_waveform(&path).unwrap_err().to_string();
            assert!(msg.contains(what), "{msg}");
        }
    }

    #[test]
    fn rejects_float_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(load_waveform(&path).unwrap_err().to_string().contains("16-bit"));
    }

    #[test]
    fn empty_waveform_rejected() {
        assert!(Waveform::new(vec![]).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN]).is_err());
    }
}
