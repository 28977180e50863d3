//! Binary checkpoint container.
//!
//! Layout (little-endian): `b"IMTN"`, `u32` version, `u32` config length and
//! the config as `key=value` text, `u32` flags (bit 0: optimizer state
//! present), `u64` optimizer step, `u32` record count, then records of
//! `u32` name length, name, `u32` rank, `u32` dims, `u64` value count, and
//! `f64` values.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::config::{ModelConfig, Variant};
use super::init::param_layout;
use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::train::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMTN";
pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub optimizer: Option<OptimizerState>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, block: &ArrayD<f64>) {
    put_str(out, name);
    out.extend_from_slice(&(block.ndim() as u32).to_le_bytes());
    for &d in block.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    for v in block.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut out, &ck.config.to_text());
    let flags = ck.optimizer.is_some() as u32;
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&ck.optimizer.as_ref().map_or(0, |o| o.step).to_le_bytes());
    let mut records: Vec<(String, &ArrayD<f64>)> = ck.params.iter().map(|(k, v)| (k.to_string(), v)).collect();
    if let Some(opt) = &ck.optimizer {
        records.extend(opt.m.iter().map(|(k, v)| (format!("{M_PREFIX}{k}"), v)));
        records.extend(opt.v.iter().map(|(k, v)| (format!("{V_PREFIX}{k}"), v)));
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, block) in records {
        put_block(&mut out, &name, block);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(corrupt("unrecognized magic (not a checkpoint)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = ModelConfig::from_text(&r.string("config")?)?;
    let flags = r.u32("flags")?;
    let step = r.u64("optimizer step")?;
    let n = r.u32("record count")?;
    let (mut params, mut m, mut v) = (ParameterSet::new(), ParameterSet::new(), ParameterSet::new());
    for _ in 0..n {
        let name = r.string("block name")?;
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = r.u64("value count")? as usize;
        if dims.iter().product::<usize>() != count {
            return Err(corrupt(format!("block `{name}`: {count} values for shape {dims:?}")));
        }
        let raw = r.take(count * 8, &format!("block `{name}`"))?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let block = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("count checked");
        if let Some(k) = name.strip_prefix(M_PREFIX) {
            m.insert(k, block);
        } else if let Some(k) = name.strip_prefix(V_PREFIX) {
            v.insert(k, block);
        } else {
            params.insert(name, block);
        }
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    validate_layout(&config, &params)?;
    let optimizer = if flags & 1 == 1 {
        if !m.same_layout(&params) || !v.same_layout(&params) {
            return Err(corrupt("optimizer moments do not mirror the parameter layout"));
        }
        Some(OptimizerState { step, m, v })
    } else {
        None
    };
    Ok(Checkpoint { config, params, optimizer })
}

/// Every block the config implies is present with the implied shape, and nothing else.
pub fn validate_layout(cfg: &ModelConfig, params: &ParameterSet) -> Result<()> {
    let specs = param_layout(cfg);
    for spec in &specs {
        let block = params
            .get(&spec.name)
            .map_err(|_| corrupt(format!("missing block `{}`", spec.name)))?;
        if block.shape() != spec.shape.as_slice() {
            return Err(corrupt(format!(
                "block `{}` has shape {:?} but the config implies {:?}",
                spec.name,
                block.shape(),
                spec.shape
            )));
        }
    }
    if params.len() != specs.len() {
        let extra = params
            .names()
            .find(|n| !specs.iter().any(|s| s.name == *n))
            .unwrap_or("?");
        return Err(corrupt(format!("unexpected block `{extra}`")));
    }
    if let Some(name) = params.first_non_finite() {
        return Err(corrupt(format!("block `{name}` contains non-finite values")));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load a checkpoint and require it to hold the given model variant.
pub fn load_checkpoint_for(path: &Path, variant: Variant) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.config.variant != variant {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} model but a {} model was requested",
            ck.config.variant, variant
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;

    fn toy() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            cnn_channels: [1, 1, 2, 2],
            recurrent_hidden: 3,
            fc_width: 4,
            adapter_width: 2,
            attention_width: 2,
            fft_size: 128,
            n_filters: 16,
            kernel_len: 15,
            ..ModelConfig::default()
        }
    }

    fn sample() -> Checkpoint {
        let config = toy();
        let params = init_parameters(&config, 3).unwrap();
        let mut m = params.clone();
        m.scale(0.5);
        let v = params.zeros_like();
        Checkpoint {
            config,
            params,
            optimizer: Some(OptimizerState { step: 17, m, v }),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut ck = sample();
        ck.params.get_mut("fc.bias").unwrap()[[0]] = -0.0;
        ck.params.get_mut("fc.bias").unwrap()[[1]] = 1e-310;
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert!(back.params.bit_eq(&ck.params));
        let (a, b) = (back.optimizer.unwrap(), ck.optimizer.unwrap());
        assert_eq!(a.step, 17);
        assert!(a.m.bit_eq(&b.m) && a.v.bit_eq(&b.v));
        assert_eq!(back.config, ck.config);
    }

    #[test]
    fn no_optimizer_state() {
        let mut ck = sample();
        ck.optimizer = None;
        assert!(decode_checkpoint(&encode_checkpoint(&ck)).unwrap().optimizer.is_none());
    }

    #[test]
    fn tampered_inputs_rejected() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ck = sample();
        ck.optimizer = None;
        ck.params.insert("fc.bias", ArrayD::zeros(IxDyn(&[7])));
        let err = decode_checkpoint(&encode_checkpoint(&ck)).unwrap_err().to_string();
        assert!(err.contains("fc.bias"), "{err}");
    }

    #[test]
    fn variant_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ck = sample();
        ck.config.variant = Variant::CnnBlstm;
        save_checkpoint(&path, &ck).unwrap();
        assert!(load_checkpoint_for(&path, Variant::CnnBlstm).is_ok());
        let err = load_checkpoint_for(&path, Variant::CnnSlstm).unwrap_err().to_string();
        assert!(err.contains("cnn_blstm"), "{err}");
    }
}
