use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{log_sigmoid, sigmoid, CellKind, CellParams, ForgetMode, Gate, SLstmParams, SequenceCache};
use crate::error::{Error, Result};

/// Cell `c`, normalizer `n`, hidden output `h` and log-domain stabilizer `m`.
///
/// In the stabilized recurrence `c` and `n` are both scaled by `exp(-m)`, so
/// only their ratio is comparable with the naive recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct SLstmState {
    pub c: Array1<f64>,
    pub n: Array1<f64>,
    pub h: Array1<f64>,
    pub m: Array1<f64>,
}

impl SLstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            c: Array1::zeros(hidden),
            n: Array1::zeros(hidden),
            h: Array1::zeros(hidden),
            m: Array1::zeros(hidden),
        }
    }

    /// Normalized cell `c / n`.
    pub fn h_tilde(&self) -> Array1<f64> {
        &self.c / &self.n
    }
}

fn pre_activations(x: ArrayView1<f64>, h: &Array1<f64>, p: &CellParams) -> Result<[Array1<f64>; 4]> {
    p.validate()?;
    if x.len() != p.input() || h.len() != p.hidden() {
        return Err(Error::Shape(format!(
            "step input {} / state {} vs cell {}x{}",
            x.len(),
            h.len(),
            p.input(),
            p.hidden()
        )));
    }
    Ok(std::array::from_fn(|g| p.w[g].dot(&x) + p.r[g].dot(h) + &p.b[g]))
}

/// One step of the recurrence exactly as written: `i = exp(ĩ)`, `f = exp(f̃)`
/// or `σ(f̃)`. Fails if any state component leaves the finite range.
pub fn slstm_step_naive(x: ArrayView1<f64>, s: &SLstmState, p: &SLstmParams) -> Result<SLstmState> {
    let [az, ai, af, ao] = pre_activations(x, &s.h, &p.cell)?;
    let hidden = s.h.len();
    let mut next = SLstmState::zeros(hidden);
    for u in 0..hidden {
        let z = az[u].tanh();
        let i = ai[u].exp();
        let f = match p.forget_mode {
            ForgetMode::Exponential => af[u].exp(),
            ForgetMode::Sigmoid => sigmoid(af[u]),
        };
        let o = sigmoid(ao[u]);
        let c = f * s.c[u] + i * z;
        let n = f * s.n[u] + i;
        let h = o * (c / n);
        if !(c.is_finite() && n.is_finite() && h.is_finite()) {
            return Err(Error::Overflow { unit: u });
        }
        next.c[u] = c;
        next.n[u] = n;
        next.h[u] = h;
    }
    Ok(next)
}

struct StepValues {
    z: f64,
    i: f64,
    f: f64,
    o: f64,
    c: f64,
    n: f64,
    h: f64,
    m: f64,
}

#[inline]
fn stabilized_unit(mode: ForgetMode, pre: [f64; 4], c: f64, n: f64, m: f64) -> StepValues {
    let [az, ai, af, ao] = pre;
    let log_f = match mode {
        ForgetMode::Exponential => af,
        ForgetMode::Sigmoid => log_sigmoid(af),
    };
    let m_new = (log_f + m).max(ai);
    let i = (ai - m_new).exp();
    let f = (log_f + m - m_new).exp();
    let z = az.tanh();
    let o = sigmoid(ao);
    let c_new = f * c + i * z;
    let n_new = f * n + i;
    StepValues {
        z,
        i,
        f,
        o,
        c: c_new,
        n: n_new,
        h: o * (c_new / n_new),
        m: m_new,
    }
}

/// Log-domain stabilized step. Produces the same `c / n` and `h` as the naive
/// step while keeping every gate value in `(0, 1]`.
pub fn slstm_step_stabilized(
    x: ArrayView1<f64>,
    s: &SLstmState,
    p: &SLstmParams,
) -> Result<SLstmState> {
    let pre = pre_activations(x, &s.h, &p.cell)?;
    let hidden = s.h.len();
    let mut next = SLstmState::zeros(hidden);
    for u in 0..hidden {
        let v = stabilized_unit(
            p.forget_mode,
            [pre[0][u], pre[1][u], pre[2][u], pre[3][u]],
            s.c[u],
            s.n[u],
            s.m[u],
        );
        next.c[u] = v.c;
        next.n[u] = v.n;
        next.h[u] = v.h;
        next.m[u] = v.m;
    }
    Ok(next)
}

/// Stabilized recurrence from the zero state; row `t` is `h_t`.
pub fn slstm_forward(x: ArrayView2<f64>, p: &SLstmParams) -> Result<Array2<f64>> {
    super::sequence_forward(CellKind::SLstm(p.forget_mode), &p.cell, x).map(|(h, _)| h)
}

pub(super) fn forward_cached(mode: ForgetMode, p: &CellParams, proj: &[Array2<f64>; 4]) -> SequenceCache {
    let (t_len, hidden) = proj[0].dim();
    let mut gates: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((t_len, hidden)));
    let mut c_all = Array2::zeros((t_len, hidden));
    let mut n_all = Array2::zeros((t_len, hidden));
    let mut h_all = Array2::zeros((t_len, hidden));
    let mut f_pre = Array2::zeros((t_len, hidden));
    let mut c = vec![0.0; hidden];
    let mut n = vec![0.0; hidden];
    let mut m = vec![0.0; hidden];
    let mut h = Array1::<f64>::zeros(hidden);
    for t in 0..t_len {
        let rec: [Array1<f64>; 4] = std::array::from_fn(|g| p.r[g].dot(&h));
        for u in 0..hidden {
            let pre = std::array::from_fn(|g| proj[g][[t, u]] + rec[g][u]);
            let v = stabilized_unit(mode, pre, c[u], n[u], m[u]);
            f_pre[[t, u]] = pre[Gate::F as usize];
            gates[Gate::Z as usize][[t, u]] = v.z;
            gates[Gate::I as usize][[t, u]] = v.i;
            gates[Gate::F as usize][[t, u]] = v.f;
            gates[Gate::O as usize][[t, u]] = v.o;
            c[u] = v.c;
            n[u] = v.n;
            m[u] = v.m;
            h[u] = v.h;
            c_all[[t, u]] = v.c;
            n_all[[t, u]] = v.n;
            h_all[[t, u]] = v.h;
        }
    }
    SequenceCache {
        kind: CellKind::SLstm(mode),
        gates,
        f_pre,
        c: c_all,
        aux: n_all,
        h: h_all,
    }
}
