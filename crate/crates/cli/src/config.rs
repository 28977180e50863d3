//! `key=value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use imtinet_core::ingest::SynthConfig;
use imtinet_core::model::{ModelConfig, MODEL_KEYS};
use imtinet_core::train::{GradcheckConfig, TrainConfig};
use imtinet_core::{Error, Result};

/// Keys owned by the synthetic-data generator. `embed_dim`, `hop` and
/// `fft_size` are model keys that also drive the generator.
pub const SYNTH_KEYS: [&str; 10] = [
    "n_train",
    "n_val",
    "n_test",
    "min_frames",
    "max_frames",
    "label_scale",
    "label_offset",
    "noise_std",
    "spread_min",
    "spread_max",
];

pub const GRADCHECK_KEYS: [&str; 3] = ["gradcheck_step", "gradcheck_tol", "gradcheck_coords"];

pub const PATH_KEYS: [&str; 3] = ["manifest", "checkpoint", "predictions"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub gradcheck: GradcheckConfig,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let synth = SynthConfig {
            embed_dim: model.embed_dim,
            hop: model.hop,
            fft_size: model.fft_size,
            ..SynthConfig::default()
        };
        Self {
            model,
            train: TrainConfig::default(),
            synth,
            gradcheck: GradcheckConfig::default(),
            manifest: None,
            checkpoint: None,
            predictions: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{}`", v.trim())))
}

impl RunConfig {
    /// Read a config file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path.parent().unwrap_or(Path::new("")))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            self.set(k, v.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
            seen.push(k.to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| Some(base.join(v));
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "embed_dim" => {
                self.model.embed_dim = parse(key, value)?;
                self.synth.embed_dim = self.model.embed_dim;
            }
            "hop" => {
                self.model.hop = parse(key, value)?;
                self.synth.hop = self.model.hop;
            }
            "fft_size" => {
                self.model.fft_size = parse(key, value)?;
                self.synth.fft_size = self.model.fft_size;
            }
            "n_train" => self.synth.n_train = parse(key, value)?,
            "n_val" => self.synth.n_val = parse(key, value)?,
            "n_test" => self.synth.n_test = parse(key, value)?,
            "min_frames" => self.synth.min_frames = parse(key, value)?,
            "max_frames" => self.synth.max_frames = parse(key, value)?,
            "label_scale" => self.synth.label_scale = parse(key, value)?,
            "label_offset" => self.synth.label_offset = parse(key, value)?,
            "noise_std" => self.synth.noise_std = parse(key, value)?,
            "spread_min" => self.synth.spread_min = parse(key, value)?,
            "spread_max" => self.synth.spread_max = parse(key, value)?,
            "gradcheck_step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck_tol" => self.gradcheck.tol = parse(key, value)?,
            "gradcheck_coords" => self.gradcheck.coords_per_block = parse(key, value)?,
            "manifest" => self.manifest = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "predictions" => self.predictions = path(value),
            _ => {
                if !(self.model.set(key, value)? || self.train.set(key, value)?) {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// One seed drives initialization, the epoch shuffle, data synthesis and
    /// gradient-check sampling.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.gradcheck.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    /// Every key with its resolved value. Paths are written absolute when they exist.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let g = &self.gradcheck;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        for (k, v) in self.model.to_pairs() {
            put(k, v);
        }
        for (k, v) in self.train.to_pairs() {
            put(k, v);
        }
        put("n_train", s.n_train.to_string());
        put("n_val", s.n_val.to_string());
        put("n_test", s.n_test.to_string());
        put("min_frames", s.min_frames.to_string());
        put("max_frames", s.max_frames.to_string());
        put("label_scale", format!("{:?}", s.label_scale));
        put("label_offset", format!("{:?}", s.label_offset));
        put("noise_std", format!("{:?}", s.noise_std));
        put("spread_min", format!("{:?}", s.spread_min));
        put("spread_max", format!("{:?}", s.spread_max));
        put("gradcheck_step", format!("{:?}", g.step));
        put("gradcheck_tol", format!("{:?}", g.tol));
        put("gradcheck_coords", g.coords_per_block.to_string());
        for (k, p) in [
            ("manifest", &self.manifest),
            ("checkpoint", &self.checkpoint),
            ("predictions", &self.predictions),
        ] {
            if let Some(p) = p {
                let p = fs::canonicalize(p).unwrap_or_else(|_| p.clone());
                put(k, p.display().to_string());
            }
        }
        out
    }

    pub fn write_dump(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join("effective.cfg");
        fs::write(&path, self.to_text())
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// All keys accepted in a config file.
pub fn all_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = MODEL_KEYS.to_vec();
    keys.extend(imtinet_core::train::TRAIN_KEYS);
    keys.extend(SYNTH_KEYS);
    keys.extend(GRADCHECK_KEYS);
    keys.extend(PATH_KEYS);
    keys
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config: ").map(String::from).unwrap_or(s)
}
