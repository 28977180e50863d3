use std::fmt;
use std::str::FromStr;

use crate::dsp::{StftConfig, Window};
use crate::error::{Error, Result};
use crate::recurrent::{CellKind, ForgetMode};

/// Number of stride-3 reductions applied to the feature axis by the CNN.
pub const CNN_GROUPS: usize = 4;
pub const LAYERS_PER_GROUP: usize = 3;
/// Smallest CNN input width that survives every reduction with a full window.
pub const MIN_CNN_INPUT_WIDTH: usize = 81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    CnnBlstm,
    CnnSlstm,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CnnBlstm => "cnn_blstm",
            Variant::CnnSlstm => "cnn_slstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn_blstm" => Ok(Variant::CnnBlstm),
            "cnn_slstm" => Ok(Variant::CnnSlstm),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding width `D`.
    pub embed_dim: usize,
    pub cnn_channels: [usize; CNN_GROUPS],
    /// Units per direction.
    pub recurrent_hidden: usize,
    pub fc_width: usize,
    pub adapter_width: usize,
    pub attention_width: usize,
    pub forget_mode: ForgetMode,
    pub fft_size: usize,
    pub hop: usize,
    pub n_filters: usize,
    pub kernel_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::CnnSlstm,
            embed_dim: 768,
            cnn_channels: [16, 32, 64, 128],
            recurrent_hidden: 128,
            fc_width: 128,
            adapter_width: 128,
            attention_width: 128,
            forget_mode: ForgetMode::Exponential,
            fft_size: 512,
            hop: 256,
            n_filters: 64,
            kernel_len: 251,
            seed: 0,
        }
    }
}

/// Keys written by [`ModelConfig::to_pairs`], in order.
pub const MODEL_KEYS: [&str; 13] = [
    "variant",
    "embed_dim",
    "cnn_channels",
    "recurrent_hidden",
    "fc_width",
    "adapter_width",
    "attention_width",
    "forget_mode",
    "fft_size",
    "hop",
    "n_filters",
    "kernel_len",
    "seed",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl ModelConfig {
    /// Small dimensions for gradient checks and quick experiments: `D = 8`,
    /// widths 8, 128-point FFT with a 64-sample hop.
    pub fn toy(variant: Variant, forget_mode: ForgetMode) -> Self {
        Self {
            variant,
            embed_dim: 8,
            cnn_channels: [2, 2, 2, 2],
            recurrent_hidden: 8,
            fc_width: 8,
            adapter_width: 8,
            attention_width: 8,
            forget_mode,
            fft_size: 128,
            hop: 64,
            n_filters: 16,
            kernel_len: 31,
            seed: 0,
        }
    }

    pub fn cell_kind(&self) -> CellKind {
        match self.variant {
            Variant::CnnBlstm => CellKind::Lstm,
            Variant::CnnSlstm => CellKind::SLstm(self.forget_mode),
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            window: Window::Hamming,
        }
    }

    pub fn stft_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn cnn_input_width(&self) -> usize {
        self.stft_bins() + self.n_filters
    }

    /// Feature-axis width entering each group, plus the final width.
    pub fn cnn_widths(&self) -> [usize; CNN_GROUPS + 1] {
        let mut w = [0; CNN_GROUPS + 1];
        w[0] = self.cnn_input_width();
        for g in 0..CNN_GROUPS {
            w[g + 1] = (w[g] - 1) / 3 + 1;
        }
        w
    }

    /// Width of the flattened CNN output per frame.
    pub fn cnn_output_width(&self) -> usize {
        self.cnn_channels[CNN_GROUPS - 1] * self.cnn_widths()[CNN_GROUPS]
    }

    pub fn recurrent_input(&self) -> usize {
        self.adapter_width + self.cnn_output_width()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("recurrent_hidden", self.recurrent_hidden),
            ("fc_width", self.fc_width),
            ("adapter_width", self.adapter_width),
            ("attention_width", self.attention_width),
            ("fft_size", self.fft_size),
            ("hop", self.hop),
            ("n_filters", self.n_filters),
            ("kernel_len", self.kernel_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("`embed_dim` must be >= 2".into()));
        }
        if self.cnn_channels.contains(&0) {
            return Err(Error::Config("`cnn_channels` must all be positive".into()));
        }
        if self.kernel_len % 2 == 0 {
            return Err(Error::Config("`kernel_len` must be odd".into()));
        }
        if self.cnn_input_width() < MIN_CNN_INPUT_WIDTH {
            return Err(Error::Config(format!(
                "CNN input width {} (fft_size/2+1 + n_filters) is too small for four stride-3 reductions; need >= {MIN_CNN_INPUT_WIDTH}",
                self.cnn_input_width()
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let c = &self.cnn_channels;
        vec![
            ("variant", self.variant.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("cnn_channels", format!("{},{},{},{}", c[0], c[1], c[2], c[3])),
            ("recurrent_hidden", self.recurrent_hidden.to_string()),
            ("fc_width", self.fc_width.to_string()),
            ("adapter_width", self.adapter_width.to_string()),
            ("attention_width", self.attention_width.to_string()),
            ("forget_mode", self.forget_mode.as_str().to_string()),
            ("fft_size", self.fft_size.to_string()),
            ("hop", self.hop.to_string()),
            ("n_filters", self.n_filters.to_string()),
            ("kernel_len", self.kernel_len.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Apply one `key = value` setting. Returns `false` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "variant" => self.variant = value.trim().parse()?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "cnn_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse_num(key, p))
                    .collect::<Result<_>>()?;
                self.cnn_channels = parts.try_into().map_err(|_| {
                    Error::Config("`cnn_channels` needs exactly four comma-separated values".into())
                })?;
            }
            "recurrent_hidden" => self.recurrent_hidden = parse_num(key, value)?,
            "fc_width" => self.fc_width = parse_num(key, value)?,
            "adapter_width" => self.adapter_width = parse_num(key, value)?,
            "attention_width" => self.attention_width = parse_num(key, value)?,
            "forget_mode" => self.forget_mode = value.trim().parse()?,
            "fft_size" => self.fft_size = parse_num(key, value)?,
            "hop" => self.hop = parse_num(key, value)?,
            "n_filters" => self.n_filters = parse_num(key, value)?,
            "kernel_len" => self.kernel_len = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Inverse of [`ModelConfig::to_text`]; every key must be present exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            let k = k.trim();
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
            if seen.contains(&k) {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
            seen.push(k);
        }
        if let Some(missing) = MODEL_KEYS.iter().find(|k| !seen.contains(k)) {
            return Err(Error::Config(format!("missing model key `{missing}`")));
        }
        Ok(cfg)
    }
}
