//! Recurrent cells: the exponentially gated sLSTM with its normalizer state,
//! and a standard LSTM baseline. Both share the four-gate parameter layout
//! (`z` candidate, `i` input, `f` forget, `o` output).
//!
//! Sequence forwards keep every per-step activation so that
//! [`sequence_backward`] can run backpropagation through time for the scalar
//! `L = sum_t <G_t, h_t>` given the upstream gradients `G`.

mod lstm;
mod slstm;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub use lstm::{lstm_sequence_forward, LstmState};
pub use slstm::{slstm_forward, slstm_step_naive, slstm_step_stabilized, SLstmState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForgetMode {
    Exponential,
    Sigmoid,
}

impl ForgetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForgetMode::Exponential => "exponential",
            ForgetMode::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for ForgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(ForgetMode::Exponential),
            "sigmoid" => Ok(ForgetMode::Sigmoid),
            other => Err(Error::Config(format!("unknown forget mode `{other}`"))),
        }
    }
}

/// Which recurrence a parameter block drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    SLstm(ForgetMode),
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Z = 0,
    I = 1,
    F = 2,
    O = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Z, Gate::I, Gate::F, Gate::O];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Z => "z",
            Gate::I => "i",
            Gate::F => "f",
            Gate::O => "o",
        }
    }
}

/// Input weights `w` (`H × I`), dense recurrent weights `r` (`H × H`) and
/// biases `b` (`H`) for each gate, indexed by [`Gate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub w: [Array2<f64>; 4],
    pub r: [Array2<f64>; 4],
    pub b: [Array1<f64>; 4],
}

impl CellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Array2::zeros((hidden, input))),
            r: std::array::from_fn(|_| Array2::zeros((hidden, hidden))),
            b: std::array::from_fn(|_| Array1::zeros(hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn input(&self) -> usize {
        self.w[0].ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden(), self.input());
        for g in 0..4 {
            if self.w[g].dim() != (h, i) || self.r[g].dim() != (h, h) || self.b[g].len() != h {
                return Err(Error::Shape(format!(
                    "gate {}: expected w {h}x{i}, r {h}x{h}, b {h}",
                    Gate::ALL[g].suffix()
                )));
            }
        }
        Ok(())
    }

    /// `W_g x_t + b_g` for every step, `T × H` per gate.
    fn input_projections(&self, x: ArrayView2<f64>) -> [Array2<f64>; 4] {
        std::array::from_fn(|g| x.dot(&self.w[g].t()) + &self.b[g])
    }
}

/// sLSTM parameters together with the forget-gate variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SLstmParams {
    pub cell: CellParams,
    pub forget_mode: ForgetMode,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x), accurate for large |x|.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Per-step activations of a unidirectional pass.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    kind: CellKind,
    /// Gate values, `T × H` each. For the sLSTM `i` and `f` hold the
    /// stabilized gates `exp(ĩ - m_t)` and `exp(log f + m_{t-1} - m_t)`.
    gates: [Array2<f64>; 4],
    /// Raw forget pre-activation (needed for the sigmoid-forget derivative).
    f_pre: Array2<f64>,
    /// Cell state after each step.
    c: Array2<f64>,
    /// Normalizer state after each step (sLSTM) or `tanh(c)` (LSTM).
    aux: Array2<f64>,
    /// Hidden output after each step.
    h: Array2<f64>,
}

impl SequenceCache {
    pub fn hidden_states(&self) -> &Array2<f64> {
        &self.h
    }
}

/// Gradients of one cell's parameter blocks.
pub type CellGrads = CellParams;

pub fn sequence_forward(
    kind: CellKind,
    params: &CellParams,
    x: ArrayView2<f64>,
) -> Result<(Array2<f64>, SequenceCache)> {
    params.validate()?;
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("recurrent input has no frames".into()));
    }
    if x.ncols() != params.input() {
        return Err(Error::Shape(format!(
            "recurrent input width {} but cell expects {}",
            x.ncols(),
            params.input()
        )));
    }
    let proj = params.input_projections(x);
    let cache = match kind {
        CellKind::SLstm(mode) => slstm::forward_cached(mode, params, &proj),
        CellKind::Lstm => lstm::forward_cached(params, &proj),
    };
    Ok((cache.h.clone(), cache))
}

/// Backpropagation through time. Returns parameter gradients and `dL/dX`.
pub fn sequence_backward(
    params: &CellParams,
    x: ArrayView2<f64>,
    cache: &SequenceCache,
    upstream: ArrayView2<f64>,
) -> Result<(CellGrads, Array2<f64>)> {
    if upstream.dim() != cache.h.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} vs hidden states {:?}",
            upstream.dim(),
            cache.h.dim()
        )));
    }
    let (t_len, hidden) = cache.h.dim();
    // Pre-activation gradients per gate, filled backwards in time.
    let mut d_pre: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((t_len, hidden)));
    let mut dh_rec = Array1::<f64>::zeros(hidden);
    let mut dc_next = Array1::<f64>::zeros(hidden);
    let mut dn_next = Array1::<f64>::zeros(hidden);
    let [gz, gi, gf, go] = &cache.gates;

    for t in (0..t_len).rev() {
        for u in 0..hidden {
            let dh = upstream[[t, u]] + dh_rec[u];
            let (z, i, f, o) = (gz[[t, u]], gi[[t, u]], gf[[t, u]], go[[t, u]]);
            let c = cache.c[[t, u]];
            let c_prev = if t > 0 { cache.c[[t - 1, u]] } else { 0.0 };
            let (dz, di, df, d_o, dc);
            match cache.kind {
                CellKind::SLstm(mode) => {
                    let n = cache.aux[[t, u]];
                    let n_prev = if t > 0 { cache.aux[[t - 1, u]] } else { 0.0 };
                    let h_tilde = c / n;
                    d_o = dh * h_tilde;
                    let dht = dh * o;
                    let dct = dc_next[u] + dht / n;
                    let dnt = dn_next[u] - dht * h_tilde / n;
                    dz = dct * i;
                    di = dct * z + dnt;
                    df = dct * c_prev + dnt * n_prev;
                    dc = dct;
                    dn_next[u] = dnt * f;
                    let df_pre = match mode {
                        ForgetMode::Exponential => df * f,
                        ForgetMode::Sigmoid => df * f * (1.0 - sigmoid(cache.f_pre[[t, u]])),
                    };
                    d_pre[Gate::F as usize][[t, u]] = df_pre;
                    d_pre[Gate::I as usize][[t, u]] = di * i;
                }
                CellKind::Lstm => {
                    let tc = cache.aux[[t, u]];
                    d_o = dh * tc;
                    let dct = dc_next[u] + dh * o * (1.0 - tc * tc);
                    dz = dct * i;
                    di = dct * z;
                    df = dct * c_prev;
                    dc = dct;
                    d_pre[Gate::F as usize][[t, u]] = df * f * (1.0 - f);
                    d_pre[Gate::I as usize][[t, u]] = di * i * (1.0 - i);
                }
            }
            dc_next[u] = dc * f;
            d_pre[Gate::Z as usize][[t, u]] = dz * (1.0 - z * z);
            d_pre[Gate::O as usize][[t, u]] = d_o * o * (1.0 - o);
        }
        dh_rec.fill(0.0);
        for g in 0..4 {
            dh_rec += &params.r[g].t().dot(&d_pre[g].row(t));
        }
    }

    let h_prev = {
        let mut hp = Array2::zeros((t_len, hidden));
        hp.slice_mut(s![1.., ..]).assign(&cache.h.slice(s![..t_len - 1, ..]));
        hp
    };
    let mut dx = Array2::zeros(x.dim());
    let grads = CellParams {
        w: std::array::from_fn(|g| d_pre[g].t().dot(&x)),
        r: std::array::from_fn(|g| d_pre[g].t().dot(&h_prev)),
        b: std::array::from_fn(|g| d_pre[g].sum_axis(Axis(0))),
    };
    for g in 0..4 {
        dx += &d_pre[g].dot(&params.w[g]);
    }
    Ok((grads, dx))
}

fn reversed(x: ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

/// Caches for both directions of a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BidirectionalCache {
    pub forward: SequenceCache,
    pub backward: SequenceCache,
}

/// Forward pass over `X` and over time-reversed `X` (re-reversed afterwards),
/// concatenated along features: `T × 2H`.
pub fn bidirectional_forward(
    kind: CellKind,
    p_fwd: &CellParams,
    p_bwd: &CellParams,
    x: ArrayView2<f64>,
) -> Result<(Array2<f64>, BidirectionalCache)> {
    let (hf, cf) = sequence_forward(kind, p_fwd, x)?;
    let xr = reversed(x);
    let (hb, cb) = sequence_forward(kind, p_bwd, xr.view())?;
    let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.slice(s![..;-1, ..])])
        .expect("equal row counts");
    Ok((
        out,
        BidirectionalCache {
            forward: cf,
            backward: cb,
        },
    ))
}

pub fn bidirectional_backward(
    p_fwd: &CellParams,
    p_bwd: &CellParams,
    x: ArrayView2<f64>,
    cache: &BidirectionalCache,
    upstream: ArrayView2<f64>,
) -> Result<(CellGrads, CellGrads, Array2<f64>)> {
    let h = p_fwd.hidden();
    if upstream.ncols() != 2 * h {
        return Err(Error::Shape(format!(
            "bidirectional upstream width {} but 2H = {}",
            upstream.ncols(),
            2 * h
        )));
    }
    let (gf, dxf) = sequence_backward(p_fwd, x, &cache.forward, upstream.slice(s![.., ..h]))?;
    let xr = reversed(x);
    let up_b = reversed(upstream.slice(s![.., h..]));
    let (gb, dxr) = sequence_backward(p_bwd, xr.view(), &cache.backward, up_b.view())?;
    let dx = dxf + &dxr.slice(s![..;-1, ..]);
    Ok((gf, gb, dx))
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn loss(kind: CellKind, p: &CellParams, x: &Array2<f64>, g: &Array2<f64>) -> f64 {
        let (h, _) = sequence_forward(kind, p, x.view()).unwrap();
        (&h * g).sum()
    }

    fn rel(a: f64, f: f64) -> f64 {
        (a - f).abs() / a.abs().max(f.abs()).max(1e-8)
    }

    /// Central differences over every coordinate of every block and input.
    fn check_all(kind: CellKind, seed: u64) {
        let mut r = rng(seed);
        let (t, h, i) = (5, 3, 2);
        let p = random_cell(&mut r, i, h, 0.8);
        let x = random_matrix(&mut r, t, i, 1.0);
        let g = random_matrix(&mut r, t, h, 1.0);
        let (_, cache) = sequence_forward(kind, &p, x.view()).unwrap();
        let (grads, dx) = sequence_backward(&p, x.view(), &cache, g.view()).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for gate in 0..4 {
            for which in 0..3 {
                let n = match which {
                    0 => p.w[gate].len(),
                    1 => p.r[gate].len(),
                    _ => p.b[gate].len(),
                };
                for k in 0..n {
                    let bump = |d: f64| {
                        let mut q = p.clone();
                        match which {
                            0 => q.w[gate].as_slice_mut().unwrap()[k] += d,
                            1 => q.r[gate].as_slice_mut().unwrap()[k] += d,
                            _ => q.b[gate].as_slice_mut().unwrap()[k] += d,
                        }
                        loss(kind, &q, &x, &g)
                    };
                    let fd = (bump(step) - bump(-step)) / (2.0 * step);
                    let an = match which {
                        0 => grads.w[gate].as_slice().unwrap()[k],
                        1 => grads.r[gate].as_slice().unwrap()[k],
                        _ => grads.b[gate].as_slice().unwrap()[k],
                    };
                    if matches!(kind, CellKind::SLstm(_)) && gate == Gate::I as usize && which == 2 {
                        // A common shift of every input pre-activation scales c and n
                        // alike, so h (and the loss) cannot depend on b_i.
                        assert!(an.abs() < 1e-12 && fd.abs() < 1e-9, "b_i: {an} vs {fd}");
                        continue;
                    }
                    worst = worst.max(rel(an, fd));
                }
            }
        }
        for k in 0..x.len() {
            let bump = |d: f64| {
                let mut y = x.clone();
                y.as_slice_mut().unwrap()[k] += d;
                loss(kind, &p, &y, &g)
            };
            let fd = (bump(step) - bump(-step)) / (2.0 * step);
            worst = worst.max(rel(dx.as_slice().unwrap()[k], fd));
        }
        assert!(worst < 1e-4, "{kind:?}: worst relative error {worst}");
    }

    #[test]
    fn gradients_slstm_exponential() {
        for seed in 0..3 {
            check_all(CellKind::SLstm(ForgetMode::Exponential), seed);
        }
    }

    #[test]
    fn gradients_slstm_sigmoid() {
        for seed in 0..3 {
            check_all(CellKind::SLstm(ForgetMode::Sigmoid), seed);
        }
    }

    #[test]
    fn gradients_lstm() {
        for seed in 0..3 {
            check_all(CellKind::Lstm, seed);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(4);
        let p = random_cell(&mut r, 2, 3, 0.5);
        let x = random_matrix(&mut r, 6, 2, 1.0);
        for kind in [CellKind::SLstm(ForgetMode::Exponential), CellKind::Lstm] {
            let (_, cache) = sequence_forward(kind, &p, x.view()).unwrap();
            let (grads, dx) =
                sequence_backward(&p, x.view(), &cache, Array2::zeros((6, 3)).view()).unwrap();
            for g in 0..4 {
                assert!(grads.w[g].iter().chain(grads.r[g].iter()).chain(grads.b[g].iter()).all(|&v| v == 0.0));
            }
            assert!(dx.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn saturated_output_gate_has_tiny_bias_gradient() {
        let mut r = rng(5);
        let mut p = random_cell(&mut r, 2, 3, 0.1);
        p.w[Gate::O as usize].fill(0.0);
        p.r[Gate::O as usize].fill(0.0);
        p.b[Gate::O as usize].fill(20.0);
        let x = random_matrix(&mut r, 5, 2, 1.0);
        let g = Array2::ones((5, 3));
        let kind = CellKind::SLstm(ForgetMode::Exponential);
        let (_, cache) = sequence_forward(kind, &p, x.view()).unwrap();
        let (grads, _) = sequence_backward(&p, x.view(), &cache, g.view()).unwrap();
        let step = 1e-5;
        for u in 0..3 {
            assert!(grads.b[Gate::O as usize][u].abs() < 1e-6);
            let bump = |d: f64| {
                let mut q = p.clone();
                q.b[Gate::O as usize][u] += d;
                loss(kind, &q, &x, &g)
            };
            let fd = (bump(step) - bump(-step)) / (2.0 * step);
            assert!(fd.abs() < 1e-6);
        }
    }

    #[test]
    fn bidirectional_palindrome_symmetry() {
        let mut r = rng(6);
        let p = random_cell(&mut r, 3, 4, 0.5);
        let half = random_matrix(&mut r, 4, 3, 1.0);
        let x = ndarray::concatenate(Axis(0), &[half.view(), half.slice(s![..;-1, ..])]).unwrap();
        let kind = CellKind::SLstm(ForgetMode::Exponential);
        let (out, _) = bidirectional_forward(kind, &p, &p, x.view()).unwrap();
        assert_eq!(out.dim(), (8, 8));
        let first = out.slice(s![.., ..4]);
        let last_rev = out.slice(s![..;-1, 4..]);
        assert_eq!(first, last_rev);
    }

    #[test]
    fn bidirectional_matches_two_unidirectional_runs() {
        let mut r = rng(7);
        let pf = random_cell(&mut r, 3, 2, 0.5);
        let pb = random_cell(&mut r, 3, 2, 0.5);
        let x = random_matrix(&mut r, 7, 3, 1.0);
        for kind in [CellKind::SLstm(ForgetMode::Sigmoid), CellKind::Lstm] {
            let (out, _) = bidirectional_forward(kind, &pf, &pb, x.view()).unwrap();
            let (hf, _) = sequence_forward(kind, &pf, x.view()).unwrap();
            let xr = reversed(x.view());
            let (hb, _) = sequence_forward(kind, &pb, xr.view()).unwrap();
            assert_eq!(out.slice(s![.., ..2]), hf);
            assert_eq!(out.slice(s![.., 2..]), hb.slice(s![..;-1, ..]));
        }
    }

    #[test]
    fn bidirectional_gradients() {
        let mut r = rng(8);
        let pf = random_cell(&mut r, 2, 2, 0.7);
        let pb = random_cell(&mut r, 2, 2, 0.7);
        let x = random_matrix(&mut r, 4, 2, 1.0);
        let g = random_matrix(&mut r, 4, 4, 1.0);
        let kind = CellKind::SLstm(ForgetMode::Exponential);
        let l = |pf: &CellParams, pb: &CellParams, x: &Array2<f64>| {
            (&bidirectional_forward(kind, pf, pb, x.view()).unwrap().0 * &g).sum()
        };
        let (_, cache) = bidirectional_forward(kind, &pf, &pb, x.view()).unwrap();
        let (gf, gb, dx) = bidirectional_backward(&pf, &pb, x.view(), &cache, g.view()).unwrap();
        let step = 1e-5;
        for k in 0..pb.w[1].len() {
            let mut a = pb.clone();
            let mut b = pb.clone();
            a.w[1].as_slice_mut().unwrap()[k] += step;
            b.w[1].as_slice_mut().unwrap()[k] -= step;
            let fd = (l(&pf, &a, &x) - l(&pf, &b, &x)) / (2.0 * step);
            assert!(rel(gb.w[1].as_slice().unwrap()[k], fd) < 1e-5);
        }
        for k in 0..pf.r[3].len() {
            let mut a = pf.clone();
            let mut b = pf.clone();
            a.r[3].as_slice_mut().unwrap()[k] += step;
            b.r[3].as_slice_mut().unwrap()[k] -= step;
            let fd = (l(&a, &pb, &x) - l(&b, &pb, &x)) / (2.0 * step);
            assert!(rel(gf.r[3].as_slice().unwrap()[k], fd) < 1e-5);
        }
        for k in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_slice_mut().unwrap()[k] += step;
            b.as_slice_mut().unwrap()[k] -= step;
            let fd = (l(&pf, &pb, &a) - l(&pf, &pb, &b)) / (2.0 * step);
            assert!(rel(dx.as_slice().unwrap()[k], fd) < 1e-5);
        }
    }

    #[test]
    fn shape_errors() {
        let p = CellParams::zeros(3, 2);
        let x = Array2::zeros((4, 5));
        assert!(sequence_forward(CellKind::Lstm, &p, x.view()).is_err());
        let x = Array2::zeros((4, 3));
        let (_, cache) = sequence_forward(CellKind::Lstm, &p, x.view()).unwrap();
        assert!(sequence_backward(&p, x.view(), &cache, Array2::zeros((4, 3)).view()).is_err());
    }
}
