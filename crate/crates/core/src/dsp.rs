//! Waveform-side features: STFT magnitudes, a learnable sinc band-pass
//! filterbank sharing the STFT frame grid, and frame-rate alignment.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ingest::{Waveform, SAMPLE_RATE};

pub const NYQUIST_HZ: f64 = SAMPLE_RATE as f64 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hamming,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            window: Window::Hamming,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + floor((len - fft_size) / hop)`; a waveform shorter than one FFT
    /// (but at least one hop) yields a single zero-padded frame.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if self.fft_size == 0 || self.hop == 0 {
            return Err(Error::InvalidInput("fft_size and hop must be positive".into()));
        }
        if len < self.hop {
            return Err(Error::InvalidInput(format!(
                "waveform of {len} samples is shorter than one hop ({})",
                self.hop
            )));
        }
        Ok(if len >= self.fft_size {
            1 + (len - self.fft_size) / self.hop
        } else {
            1
        })
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // Mirror the first half so the window is exactly symmetric.
    (0..n)
        .map(|j| {
            let j = j.min(n - 1 - j);
            0.54 - 0.46 * (2.0 * PI * j as f64 / (n - 1) as f64).cos()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    /// `T_s × (fft_size / 2 + 1)` magnitudes.
    pub frames: Array2<f64>,
    pub frame_rate: f64,
}

pub fn stft_magnitude(w: &Waveform, cfg: &StftConfig) -> Result<SpectralFeatures> {
    let x = w.samples();
    let t_s = cfg.frame_count(x.len())?;
    let n = cfg.fft_size;
    let window = match cfg.window {
        Window::Hamming => hamming(n),
        Window::Rectangular => vec![1.0; n],
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut frames = Array2::zeros((t_s, cfg.bins()));
    for (t, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = t * cfg.hop;
        for (j, slot) in buf.iter_mut().enumerate() {
            let v = x.get(start + j).copied().unwrap_or(0.0);
            *slot = Complex::new(v * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (k, out) in row.iter_mut().enumerate() {
            *out = buf[k].norm();
        }
    }
    Ok(SpectralFeatures {
        frames,
        frame_rate: SAMPLE_RATE as f64 / cfg.hop as f64,
    })
}

/// Cutoffs of `B` band-pass filters, in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SincFilterbankParams {
    pub low_hz: Vec<f64>,
    pub band_hz: Vec<f64>,
    pub kernel_len: usize,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl SincFilterbankParams {
    /// Adjacent bands on a mel-spaced grid over `[30, 7900]` Hz.
    pub fn mel_init(n_filters: usize, kernel_len: usize) -> Self {
        let (lo, hi) = (hz_to_mel(30.0), hz_to_mel(7900.0));
        let edges: Vec<f64> = (0..=n_filters)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n_filters as f64))
            .collect();
        Self {
            low_hz: edges[..n_filters].to_vec(),
            band_hz: edges.windows(2).map(|w| w[1] - w[0]).collect(),
            kernel_len,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.low_hz.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_len == 0 || self.kernel_len % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "sinc kernel length {} must be odd",
                self.kernel_len
            )));
        }
        if self.low_hz.len() != self.band_hz.len() || self.low_hz.is_empty() {
            return Err(Error::Shape(format!(
                "sinc filterbank: {} low cutoffs vs {} bands",
                self.low_hz.len(),
                self.band_hz.len()
            )));
        }
        for (b, (&lo, &bw)) in self.low_hz.iter().zip(&self.band_hz).enumerate() {
            if !(lo > 0.0 && bw > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "filter {b}: cutoffs must be positive (low {lo}, band {bw})"
                )));
            }
            if lo + bw > NYQUIST_HZ {
                return Err(Error::InvalidInput(format!(
                    "filter {b}: cutoff {} Hz above Nyquist ({NYQUIST_HZ} Hz)",
                    lo + bw
                )));
            }
        }
        Ok(())
    }
}

/// Band-pass taps for one filter plus their derivatives with respect to the
/// filter's low cutoff and bandwidth (both in Hz).
#[derive(Debug, Clone)]
pub struct SincKernel {
    pub taps: Vec<f64>,
    pub d_low: Vec<f64>,
    pub d_band: Vec<f64>,
}

/// Hamming-windowed difference of two ideal low-pass sinc responses. The
/// window-weighted mean of the sinc difference is removed before windowing so
/// the taps sum to zero (no DC response).
pub fn sinc_kernel(low_hz: f64, band_hz: f64, kernel_len: usize) -> SincKernel {
    let sr = SAMPLE_RATE as f64;
    let f1 = low_hz / sr;
    let f2 = (low_hz + band_hz) / sr;
    let half = (kernel_len / 2) as f64;
    let window = hamming(kernel_len);
    let w_sum: f64 = window.iter().sum();

    let mut g = Vec::with_capacity(kernel_len);
    let mut dg_f1 = Vec::with_capacity(kernel_len);
    let mut dg_f2 = Vec::with_capacity(kernel_len);
    for j in 0..kernel_len {
        let n = j as f64 - half;
        if n == 0.0 {
            g.push(2.0 * (f2 - f1));
        } else {
            g.push(((2.0 * PI * f2 * n).sin() - (2.0 * PI * f1 * n).sin()) / (PI * n));
        }
        dg_f1.push(-2.0 * (2.0 * PI * f1 * n).cos());
        dg_f2.push(2.0 * (2.0 * PI * f2 * n).cos());
    }
    let centre = |v: &[f64]| -> Vec<f64> {
        let beta = v.iter().zip(&window).map(|(a, w)| a * w).sum::<f64>() / w_sum;
        v.iter().zip(&window).map(|(a, w)| w * (a - beta)).collect()
    };
    let taps = centre(&g);
    let k1 = centre(&dg_f1);
    let k2 = centre(&dg_f2);
    SincKernel {
        taps,
        d_low: k1.iter().zip(&k2).map(|(a, b)| (a + b) / sr).collect(),
        d_band: k2.iter().map(|b| b / sr).collect(),
    }
}

/// Sampling grid of a strided correlation: output `t` reads samples
/// `t * stride + offset + j` for `j in 0..kernel_len`, zero outside the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayout {
    pub stride: usize,
    pub offset: isize,
    pub n_out: usize,
}

impl ConvLayout {
    /// Kernels centred on STFT frame centres, one output per STFT frame.
    pub fn stft_aligned(len: usize, stft: &StftConfig, kernel_len: usize) -> Result<Self> {
        Ok(Self {
            stride: stft.hop,
            offset: (stft.fft_size / 2) as isize - (kernel_len / 2) as isize,
            n_out: stft.frame_count(len)?,
        })
    }
}

/// Filterbank outputs before rectification (kept for the backward pass).
#[derive(Debug, Clone)]
pub struct SincResponse {
    pub signed: Array2<f64>,
}

impl SincResponse {
    pub fn magnitude(&self) -> Array2<f64> {
        self.signed.mapv(f64::abs)
    }
}

fn correlate(x: &[f64], taps: &[f64], layout: &ConvLayout, t: usize) -> f64 {
    let base = (t * layout.stride) as isize + layout.offset;
    let len = x.len() as isize;
    let lo = (-base).max(0) as usize;
    let hi = ((len - base).max(0) as usize).min(taps.len());
    (lo..hi)
        .map(|j| x[(base + j as isize) as usize] * taps[j])
        .sum()
}

pub fn sinc_response(
    x: &[f64],
    p: &SincFilterbankParams,
    layout: &ConvLayout,
) -> Result<(SincResponse, Vec<SincKernel>)> {
    p.validate()?;
    let kernels: Vec<SincKernel> = p
        .low_hz
        .iter()
        .zip(&p.band_hz)
        .map(|(&lo, &bw)| sinc_kernel(lo, bw, p.kernel_len))
        .collect();
    let mut signed = Array2::zeros((layout.n_out, kernels.len()));
    for ((t, b), out) in signed.indexed_iter_mut() {
        *out = correlate(x, &kernels[b].taps, layout, t);
    }
    Ok((SincResponse { signed }, kernels))
}

/// `|x ⋆ k_b|` on the STFT frame grid, `T_s × B`.
pub fn sinc_filterbank_forward(
    w: &Waveform,
    p: &SincFilterbankParams,
    stft: &StftConfig,
) -> Result<Array2<f64>> {
    let layout = ConvLayout::stft_aligned(w.len(), stft, p.kernel_len)?;
    Ok(sinc_response(w.samples(), p, &layout)?.0.magnitude())
}

/// Gradients of a scalar with respect to `low_hz` and `band_hz`, given its
/// gradient `d_out` with respect to the rectified outputs.
pub fn sinc_backward(
    x: &[f64],
    layout: &ConvLayout,
    response: &SincResponse,
    kernels: &[SincKernel],
    d_out: ArrayView2<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_low = vec![0.0; kernels.len()];
    let mut d_band = vec![0.0; kernels.len()];
    for (b, k) in kernels.iter().enumerate() {
        // d|y|/dy = sign(y); the kink at 0 takes the zero subgradient.
        let mut d_taps = vec![0.0; k.taps.len()];
        for t in 0..layout.n_out {
            let y = response.signed[[t, b]];
            let g = d_out[[t, b]] * y.signum() * (y != 0.0) as u8 as f64;
            if g == 0.0 {
                continue;
            }
            let base = (t * layout.stride) as isize + layout.offset;
            for (j, dt) in d_taps.iter_mut().enumerate() {
                let idx = base + j as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    *dt += g * x[idx as usize];
                }
            }
        }
        d_low[b] = d_taps.iter().zip(&k.d_low).map(|(a, b)| a * b).sum();
        d_band[b] = d_taps.iter().zip(&k.d_band).map(|(a, b)| a * b).sum();
    }
    (d_low, d_band)
}

/// Row indices kept when subsampling `t_long` frames to `t` frames:
/// `i -> round(i * (t_long - 1) / (t - 1))`, or `[0]` when `t == 1`.
pub fn align_indices(t_long: usize, t: usize) -> Vec<usize> {
    if t == 1 {
        return vec![0];
    }
    (0..t)
        .map(|i| ((i * (t_long - 1)) as f64 / (t - 1) as f64).round() as usize)
        .collect()
}

/// Subsample the longer stream by nearest-neighbour index mapping so both
/// have `min(T1, T2)` rows. The shorter stream is returned unchanged.
pub fn align_frames(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (t1, t2) = (a.nrows(), b.nrows());
    if t1 == 0 || t2 == 0 {
        return Err(Error::InvalidInput("cannot align an empty stream".into()));
    }
    let t = t1.min(t2);
    let pick = |m: ArrayView2<f64>| {
        if m.nrows() == t {
            m.to_owned()
        } else {
            m.select(Axis(0), &align_indices(m.nrows(), t))
        }
    };
    Ok((pick(a), pick(b)))
}
