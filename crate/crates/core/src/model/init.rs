use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, CNN_GROUPS, LAYERS_PER_GROUP};
use super::params::ParameterSet;
use crate::dsp::SincFilterbankParams;
use crate::error::Result;
use crate::objective::Target;
use crate::recurrent::Gate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Uniform on `(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
    Uniform { fan_in: usize, fan_out: usize },
    Orthogonal,
    Constant(f64),
    MelLow,
    MelBand,
}

impl InitKind {
    pub fn uniform_bound(&self) -> Option<f64> {
        match *self {
            InitKind::Uniform { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

pub fn conv_name(layer: usize, what: &str) -> String {
    format!("cnn.conv{layer:02}.{what}")
}

pub fn recurrent_name(direction: &str, kind: &str, gate: Gate) -> String {
    format!("recurrent.{direction}.{kind}_{}", gate.suffix())
}

pub fn branch_name(target: Target, what: &str) -> String {
    format!("branch.{}.{what}", target.branch_key())
}

pub const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Every parameter block implied by `cfg`, in initialization order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<BlockSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: InitKind| {
        specs.push(BlockSpec { name, shape, init })
    };
    push("lfb.low_hz".into(), vec![cfg.n_filters], InitKind::MelLow);
    push("lfb.band_hz".into(), vec![cfg.n_filters], InitKind::MelBand);

    let mut c_in = 1;
    for layer in 0..CNN_GROUPS * LAYERS_PER_GROUP {
        let c_out = cfg.cnn_channels[layer / LAYERS_PER_GROUP];
        push(
            conv_name(layer, "weight"),
            vec![c_out, c_in, 3, 3],
            InitKind::Uniform { fan_in: 9 * c_in, fan_out: 9 * c_out },
        );
        push(conv_name(layer, "bias"), vec![c_out], InitKind::Constant(0.0));
        c_in = c_out;
    }

    let a_in = cfg.embed_dim + 3;
    push(
        "adapter.weight".into(),
        vec![a_in, cfg.adapter_width],
        InitKind::Uniform { fan_in: a_in, fan_out: cfg.adapter_width },
    );
    push("adapter.bias".into(), vec![cfg.adapter_width], InitKind::Constant(0.0));

    let (h, i) = (cfg.recurrent_hidden, cfg.recurrent_input());
    for dir in DIRECTIONS {
        for g in Gate::ALL {
            push(recurrent_name(dir, "w", g), vec![h, i], InitKind::Uniform { fan_in: i, fan_out: h });
        }
        for g in Gate::ALL {
            push(recurrent_name(dir, "r", g), vec![h, h], InitKind::Orthogonal);
        }
        for g in Gate::ALL {
            let bias = if g == Gate::F { 1.0 } else { 0.0 };
            push(recurrent_name(dir, "b", g), vec![h], InitKind::Constant(bias));
        }
    }

    push(
        "fc.weight".into(),
        vec![2 * h, cfg.fc_width],
        InitKind::Uniform { fan_in: 2 * h, fan_out: cfg.fc_width },
    );
    push("fc.bias".into(), vec![cfg.fc_width], InitKind::Constant(0.0));

    let (f, a) = (cfg.fc_width, cfg.attention_width);
    for t in Target::ALL {
        for w in ["wq", "wk", "wv"] {
            push(branch_name(t, w), vec![f, a], InitKind::Uniform { fan_in: f, fan_out: a });
        }
        push(branch_name(t, "w_out"), vec![a], InitKind::Uniform { fan_in: a, fan_out: 1 });
        push(branch_name(t, "b_out"), vec![1], InitKind::Constant(0.0));
    }
    specs
}

/// Orthonormal rows from a Gaussian matrix via modified Gram-Schmidt, with
/// the sign convention that makes the factorization unique.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
    for i in 0..n {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let rj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        let sign = if q[[i, i]] < 0.0 { -1.0 } else { 1.0 };
        q.row_mut(i).mapv_inplace(|v| sign * v / norm);
    }
    q
}

pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lfb = SincFilterbankParams::mel_init(cfg.n_filters, cfg.kernel_len);
    let mut set = ParameterSet::new();
    for spec in param_layout(cfg) {
        let dim = IxDyn(&spec.shape);
        let block = match spec.init {
            InitKind::Uniform { .. } => {
                let s = spec.init.uniform_bound().unwrap();
                ArrayD::from_shape_simple_fn(dim, || rng.random_range(-s..s))
            }
            InitKind::Orthogonal => orthogonal(spec.shape[0], &mut rng).into_dyn(),
            InitKind::Constant(c) => ArrayD::from_elem(dim, c),
            InitKind::MelLow => Array1::from(lfb.low_hz.clone()).into_dyn(),
            InitKind::MelBand => Array1::from(lfb.band_hz.clone()).into_dyn(),
        };
        set.insert(spec.name, block);
    }
    Ok(set)
}
