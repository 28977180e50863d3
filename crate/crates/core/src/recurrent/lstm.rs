use ndarray::{Array1, Array2, ArrayView2};

use super::{sigmoid, CellKind, CellParams, Gate, SequenceCache};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Array1<f64>,
    pub h: Array1<f64>,
}

/// Standard LSTM from the zero state: sigmoid `i`, `f`, `o`; tanh candidate.
pub fn lstm_sequence_forward(x: ArrayView2<f64>, p: &CellParams) -> Result<Array2<f64>> {
    super::sequence_forward(CellKind::Lstm, p, x).map(|(h, _)| h)
}

pub(super) fn forward_cached(p: &CellParams, proj: &[Array2<f64>; 4]) -> SequenceCache {
    let (t_len, hidden) = proj[0].dim();
    let mut gates: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((t_len, hidden)));
    let mut c_all = Array2::zeros((t_len, hidden));
    let mut tanh_c = Array2::zeros((t_len, hidden));
    let mut h_all = Array2::zeros((t_len, hidden));
    let mut state = LstmState {
        c: Array1::zeros(hidden),
        h: Array1::zeros(hidden),
    };
    for t in 0..t_len {
        let rec: [Array1<f64>; 4] = std::array::from_fn(|g| p.r[g].dot(&state.h));
        for u in 0..hidden {
            let pre = |g: Gate| proj[g as usize][[t, u]] + rec[g as usize][u];
            let z = pre(Gate::Z).tanh();
            let i = sigmoid(pre(Gate::I));
            let f = sigmoid(pre(Gate::F));
            let o = sigmoid(pre(Gate::O));
            let c = f * state.c[u] + i * z;
            let tc = c.tanh();
            state.c[u] = c;
            state.h[u] = o * tc;
            gates[Gate::Z as usize][[t, u]] = z;
            gates[Gate::I as usize][[t, u]] = i;
            gates[Gate::F as usize][[t, u]] = f;
            gates[Gate::O as usize][[t, u]] = o;
            c_all[[t, u]] = c;
            tanh_c[[t, u]] = tc;
            h_all[[t, u]] = o * tc;
        }
    }
    SequenceCache {
        kind: CellKind::Lstm,
        gates,
        f_pre: Array2::zeros((0, 0)),
        c: c_all,
        aux: tanh_c,
        h: h_all,
    }
}
