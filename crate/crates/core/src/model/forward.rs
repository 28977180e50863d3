use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Ix4};

use super::cnn::{cnn_backward, cnn_forward, CnnCache, CnnWeights, NUM_CONV_LAYERS};
use super::config::ModelConfig;
use super::init::{branch_name, conv_name, recurrent_name};
use super::layers::{
    branch_backward, branch_forward, dense_relu, dense_relu_backward, fuse_features, split_fused,
    BranchCache, BranchWeights,
};
use super::params::ParameterSet;
use super::{PredictionBundle, TargetPrediction};
use crate::dsp::{
    align_frames, align_indices, sinc_backward, sinc_response, stft_magnitude, ConvLayout,
    SincFilterbankParams, SincKernel, SincResponse,
};
use crate::error::{Error, Result};
use crate::ingest::{EmbeddingSequence, Waveform};
use crate::objective::{metric_loss_grad, total_loss, LossWeights, Target, TargetScores};
use crate::recurrent::{bidirectional_backward, bidirectional_forward, BidirectionalCache, CellParams, Gate};
use crate::stats::augment_sequence;

/// Everything the model needs for one utterance. The parts that do not
/// depend on parameters (statistics, STFT) are computed once up front.
#[derive(Debug, Clone)]
pub struct UtteranceInput {
    /// `T_e × (D + 3)`.
    pub augmented: Array2<f64>,
    /// `T_s × (fft/2 + 1)`.
    pub stft: Array2<f64>,
    pub waveform: Vec<f64>,
}

impl UtteranceInput {
    pub fn new(emb: &EmbeddingSequence, wave: &Waveform, cfg: &ModelConfig) -> Result<Self> {
        if emb.dim() != cfg.embed_dim {
            return Err(Error::Shape(format!(
                "embedding width {} but model expects {}",
                emb.dim(),
                cfg.embed_dim
            )));
        }
        let augmented = augment_sequence(emb)?.frames().clone();
        let stft = stft_magnitude(wave, &cfg.stft())?.frames;
        Ok(Self {
            augmented,
            stft,
            waveform: wave.samples().to_vec(),
        })
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    layout: ConvLayout,
    lfb: SincResponse,
    kernels: Vec<SincKernel>,
    cnn: CnnCache,
    adapter_out: Array2<f64>,
    /// Row maps applied by the frame alignment.
    rows_adapter: Vec<usize>,
    rows_cnn: Vec<usize>,
    fused: Array2<f64>,
    rec: BidirectionalCache,
    rec_out: Array2<f64>,
    fc_out: Array2<f64>,
    branches: Vec<BranchCache>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl ModelCache {
    /// Hash of which side of every ReLU and |·| kink each activation sits on.
    /// Two parameter points with equal signatures lie in the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = FNV_OFFSET;
        let mut feed = |class: u8| {
            h ^= class as u64;
            h = h.wrapping_mul(FNV_PRIME);
        };
        for &v in &self.lfb.signed {
            feed(if v > 0.0 { 2 } else if v < 0.0 { 1 } else { 0 });
        }
        for act in &self.cnn.acts[1..] {
            for &v in act {
                feed((v > 0.0) as u8);
            }
        }
        for &v in self.adapter_out.iter().chain(self.fc_out.iter()) {
            feed((v > 0.0) as u8);
        }
        h
    }

    pub fn num_frames(&self) -> usize {
        self.fused.nrows()
    }
}

fn cell_params(p: &ParameterSet, dir: &str) -> Result<CellParams> {
    let get = |kind: &str, g: Gate| -> Result<Array2<f64>> { Ok(p.matrix(&recurrent_name(dir, kind, g))?.to_owned()) };
    let bias = |g: Gate| -> Result<Array1<f64>> { Ok(p.vector(&recurrent_name(dir, "b", g))?.to_owned()) };
    Ok(CellParams {
        w: [get("w", Gate::Z)?, get("w", Gate::I)?, get("w", Gate::F)?, get("w", Gate::O)?],
        r: [get("r", Gate::Z)?, get("r", Gate::I)?, get("r", Gate::F)?, get("r", Gate::O)?],
        b: [bias(Gate::Z)?, bias(Gate::I)?, bias(Gate::F)?, bias(Gate::O)?],
    })
}

fn cnn_weights(p: &ParameterSet) -> Result<CnnWeights<'_>> {
    let mut weights = Vec::with_capacity(NUM_CONV_LAYERS);
    let mut biases = Vec::with_capacity(NUM_CONV_LAYERS);
    for l in 0..NUM_CONV_LAYERS {
        let name = conv_name(l, "weight");
        let w = p
            .get(&name)?
            .view()
            .into_dimensionality::<Ix4>()
            .map_err(|_| Error::Shape(format!("block `{name}` is not rank 4")))?;
        weights.push(w);
        let name = conv_name(l, "bias");
        biases.push(
            p.get(&name)?
                .as_slice()
                .ok_or_else(|| Error::Shape(format!("block `{name}` is not contiguous")))?,
        );
    }
    Ok(CnnWeights { weights, biases })
}

fn branch_weights(p: &ParameterSet, t: Target) -> Result<BranchWeights<'_>> {
    Ok(BranchWeights {
        wq: p.matrix(&branch_name(t, "wq"))?,
        wk: p.matrix(&branch_name(t, "wk"))?,
        wv: p.matrix(&branch_name(t, "wv"))?,
        w_out: p.vector(&branch_name(t, "w_out"))?,
        b_out: p.vector(&branch_name(t, "b_out"))?[0],
    })
}

pub(crate) fn lfb_params(p: &ParameterSet, cfg: &ModelConfig) -> Result<SincFilterbankParams> {
    Ok(SincFilterbankParams {
        low_hz: p.vector("lfb.low_hz")?.to_vec(),
        band_hz: p.vector("lfb.band_hz")?.to_vec(),
        kernel_len: cfg.kernel_len,
    })
}

fn row_map(n: usize, t: usize) -> Vec<usize> {
    if n == t {
        (0..t).collect()
    } else {
        align_indices(n, t)
    }
}

/// Inverse of a row selection: scatter-add `d` into `n` rows.
fn scatter_rows(d: ArrayView2<f64>, rows: &[usize], n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, d.ncols()));
    for (src, &dst) in rows.iter().enumerate() {
        let mut r = out.row_mut(dst);
        r += &d.row(src);
    }
    out
}

pub fn forward_with_cache(
    cfg: &ModelConfig,
    p: &ParameterSet,
    input: &UtteranceInput,
) -> Result<(PredictionBundle, ModelCache)> {
    // Waveform streams: fixed STFT magnitudes next to the learnable filterbank.
    let lfb = lfb_params(p, cfg)?;
    let layout = ConvLayout::stft_aligned(input.waveform.len(), &cfg.stft(), cfg.kernel_len)?;
    if layout.n_out != input.stft.nrows() {
        return Err(Error::Shape(format!(
            "STFT has {} frames but the waveform implies {}",
            input.stft.nrows(),
            layout.n_out
        )));
    }
    let (resp, kernels) = sinc_response(&input.waveform, &lfb, &layout)?;
    let (stft, lfb_mag) = align_frames(input.stft.view(), resp.magnitude().view())?;
    let wave_feats = concatenate(Axis(1), &[stft.view(), lfb_mag.view()]).expect("same rows");

    let cw = cnn_weights(p)?;
    let (cnn_out, cnn) = cnn_forward(wave_feats.view(), &cw)?;

    let adapter_out = dense_relu(
        input.augmented.view(),
        p.matrix("adapter.weight")?,
        p.vector("adapter.bias")?,
    )?;

    let t = adapter_out.nrows().min(cnn_out.nrows());
    let rows_adapter = row_map(adapter_out.nrows(), t);
    let rows_cnn = row_map(cnn_out.nrows(), t);
    let (a, c) = align_frames(adapter_out.view(), cnn_out.view())?;
    let fused = fuse_features(a.view(), c.view())?;

    let (pf, pb) = (cell_params(p, "fwd")?, cell_params(p, "bwd")?);
    let (rec_out, rec) = bidirectional_forward(cfg.cell_kind(), &pf, &pb, fused.view())?;
    let fc_out = dense_relu(rec_out.view(), p.matrix("fc.weight")?, p.vector("fc.bias")?)?;

    let mut branches = Vec::with_capacity(4);
    let mut preds = Vec::with_capacity(4);
    for target in Target::ALL {
        let (frames, utt, bc) = branch_forward(fc_out.view(), &branch_weights(p, target)?)?;
        preds.push(TargetPrediction {
            frame_scores: frames,
            utterance_score: utt,
        });
        branches.push(bc);
    }
    let bundle = PredictionBundle {
        targets: preds.try_into().expect("four targets"),
    };
    Ok((
        bundle,
        ModelCache {
            layout,
            lfb: resp,
            kernels,
            cnn,
            adapter_out,
            rows_adapter,
            rows_cnn,
            fused,
            rec,
            rec_out,
            fc_out,
            branches,
        },
    ))
}

pub fn model_forward(cfg: &ModelConfig, p: &ParameterSet, input: &UtteranceInput) -> Result<PredictionBundle> {
    forward_with_cache(cfg, p, input).map(|(b, _)| b)
}

/// Per-target gradients with respect to frame scores and the pooled score.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub frames: [Vec<f64>; 4],
    pub utterance: [f64; 4],
}

impl OutputGrads {
    /// Gradient of `total_loss` at `bundle`.
    pub fn from_loss(bundle: &PredictionBundle, y: &TargetScores, w: &LossWeights) -> Self {
        let mut frames: [Vec<f64>; 4] = Default::default();
        let mut utterance = [0.0; 4];
        for t in Target::ALL {
            let p = bundle.get(t);
            let g = w.gamma[t.index()];
            let (df, du) = metric_loss_grad(&p.frame_scores, p.utterance_score, y.get(t), w.frame_weight);
            frames[t.index()] = df.into_iter().map(|v| g * v).collect();
            utterance[t.index()] = g * du;
        }
        Self { frames, utterance }
    }
}

/// Gradient of a scalar with respect to every parameter block, given its
/// gradient with respect to the model outputs.
pub fn model_backward(
    cfg: &ModelConfig,
    p: &ParameterSet,
    input: &UtteranceInput,
    cache: &ModelCache,
    out: &OutputGrads,
) -> Result<ParameterSet> {
    let mut g = p.zeros_like();
    let t_len = cache.num_frames();

    let mut d_fc = Array2::<f64>::zeros(cache.fc_out.dim());
    for target in Target::ALL {
        let k = target.index();
        if out.frames[k].len() != t_len {
            return Err(Error::Shape(format!(
                "{} frame gradient has {} entries for {t_len} frames",
                target.name(),
                out.frames[k].len()
            )));
        }
        let pooled = out.utterance[k] / t_len as f64;
        let d_frames: Vec<f64> = out.frames[k].iter().map(|v| v + pooled).collect();
        let bw = branch_weights(p, target)?;
        let (bg, ds) = branch_backward(cache.fc_out.view(), &bw, &cache.branches[k], &d_frames);
        g.accumulate(&branch_name(target, "wq"), &bg.wq)?;
        g.accumulate(&branch_name(target, "wk"), &bg.wk)?;
        g.accumulate(&branch_name(target, "wv"), &bg.wv)?;
        g.accumulate(&branch_name(target, "w_out"), &bg.w_out)?;
        g.accumulate(&branch_name(target, "b_out"), &Array1::from_elem(1, bg.b_out))?;
        d_fc += &ds;
    }

    let (dw, db, d_rec) = dense_relu_backward(cache.rec_out.view(), p.matrix("fc.weight")?, &cache.fc_out, d_fc.view());
    g.accumulate("fc.weight", &dw)?;
    g.accumulate("fc.bias", &db)?;

    let (pf, pb) = (cell_params(p, "fwd")?, cell_params(p, "bwd")?);
    let (gf, gb, d_fused) = bidirectional_backward(&pf, &pb, cache.fused.view(), &cache.rec, d_rec.view())?;
    for (dir, cg) in [("fwd", gf), ("bwd", gb)] {
        for gate in Gate::ALL {
            let i = gate as usize;
            g.accumulate(&recurrent_name(dir, "w", gate), &cg.w[i])?;
            g.accumulate(&recurrent_name(dir, "r", gate), &cg.r[i])?;
            g.accumulate(&recurrent_name(dir, "b", gate), &cg.b[i])?;
        }
    }

    let (d_a, d_c) = split_fused(d_fused.view(), cfg.adapter_width);
    let d_adapter = scatter_rows(d_a, &cache.rows_adapter, cache.adapter_out.nrows());
    let d_cnn = scatter_rows(d_c, &cache.rows_cnn, cache.cnn.acts[0].dim().1);

    let (dw, db, _) = dense_relu_backward(
        input.augmented.view(),
        p.matrix("adapter.weight")?,
        &cache.adapter_out,
        d_adapter.view(),
    );
    g.accumulate("adapter.weight", &dw)?;
    g.accumulate("adapter.bias", &db)?;

    let cw = cnn_weights(p)?;
    let (conv_grads, d_feats) = cnn_backward(&cw, &cache.cnn, d_cnn.view());
    for (l, (dw, db)) in conv_grads.iter().enumerate() {
        g.accumulate(&conv_name(l, "weight"), dw)?;
        g.accumulate(&conv_name(l, "bias"), db)?;
    }

    // The STFT and filterbank streams have identical frame grids, so the
    // filterbank gradient is just the trailing columns.
    let bins = cfg.stft_bins();
    let d_lfb = d_feats.slice(s![.., bins..]);
    let (d_low, d_band) = sinc_backward(&input.waveform, &cache.layout, &cache.lfb, &cache.kernels, d_lfb);
    g.accumulate("lfb.low_hz", &Array1::from(d_low))?;
    g.accumulate("lfb.band_hz", &Array1::from(d_band))?;
    Ok(g)
}

/// Total loss for one utterance and its gradient.
pub fn loss_and_grad(
    cfg: &ModelConfig,
    p: &ParameterSet,
    input: &UtteranceInput,
    y: &TargetScores,
    w: &LossWeights,
) -> Result<(f64, ParameterSet)> {
    let (bundle, cache) = forward_with_cache(cfg, p, input)?;
    let loss = total_loss(&bundle, y, w)?;
    let grads = model_backward(cfg, p, input, &cache, &OutputGrads::from_loss(&bundle, y, w))?;
    Ok((loss, grads))
}

/// Seeded random utterance matching `cfg`: `t_frames` Gaussian embedding
/// frames and a waveform long enough for `t_frames` STFT frames.
pub fn synthetic_input(cfg: &ModelConfig, t_frames: usize, seed: u64) -> Result<UtteranceInput> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let emb = Array2::from_shape_simple_fn((t_frames, cfg.embed_dim), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let len = cfg.fft_size + t_frames.saturating_sub(1) * cfg.hop;
    let wave: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
    UtteranceInput::new(&EmbeddingSequence::new(emb)?, &Waveform::new(wave)?, cfg)
}
