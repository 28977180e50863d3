use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `ReLU(X W + b)` row by row. Returns the activated output.
pub fn dense_relu(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::Shape(format!(
            "dense layer: input width {}, weight {:?}, bias {}",
            x.ncols(),
            w.dim(),
            b.len()
        )));
    }
    let mut z = x.dot(&w);
    z += &b;
    z.mapv_inplace(|v| v.max(0.0));
    Ok(z)
}

/// Backward of [`dense_relu`] given its output `y`. Returns `(dW, db, dX)`.
pub fn dense_relu_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    y: &Array2<f64>,
    upstream: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let mut dz = upstream.to_owned();
    ndarray::Zip::from(&mut dz).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0
        }
    });
    (x.t().dot(&dz), dz.sum_axis(Axis(0)), dz.dot(&w.t()))
}

/// `[A ; C]` along features, adapter columns first.
pub fn fuse_features(a: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != c.nrows() {
        return Err(Error::Shape(format!(
            "cannot fuse streams with {} and {} frames",
            a.nrows(),
            c.nrows()
        )));
    }
    Ok(concatenate(Axis(1), &[a, c]).expect("row counts checked"))
}

/// Split a gradient with respect to the fused matrix back into its two parts.
pub fn split_fused(d: ArrayView2<f64>, width_a: usize) -> (ArrayView2<f64>, ArrayView2<f64>) {
    (d.slice_move(s![.., ..width_a]), d.slice_move(s![.., width_a..]))
}

/// Parameters of one prediction branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchWeights<'a> {
    pub wq: ArrayView2<'a, f64>,
    pub wk: ArrayView2<'a, f64>,
    pub wv: ArrayView2<'a, f64>,
    pub w_out: ArrayView1<'a, f64>,
    pub b_out: f64,
}

#[derive(Debug, Clone)]
pub struct BranchCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Row-softmaxed attention weights, `T × T`.
    attn: Array2<f64>,
    ctx: Array2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BranchGrads {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Self-attention over frames, a per-frame linear readout, and mean pooling.
/// Returns `(frame_scores, utterance_score)`.
pub fn branch_forward(s_in: ArrayView2<f64>, p: &BranchWeights<'_>) -> Result<(Vec<f64>, f64, BranchCache)> {
    let t_len = s_in.nrows();
    if t_len == 0 {
        return Err(Error::InvalidInput("branch input has no frames".into()));
    }
    if s_in.ncols() != p.wq.nrows() || p.wq.dim() != p.wk.dim() || p.wq.dim() != p.wv.dim() {
        return Err(Error::Shape(format!(
            "branch input width {} vs projections {:?}",
            s_in.ncols(),
            p.wq.dim()
        )));
    }
    if p.w_out.len() != p.wv.ncols() {
        return Err(Error::Shape("branch readout width mismatch".into()));
    }
    let scale = 1.0 / (p.wq.ncols() as f64).sqrt();
    let q = s_in.dot(&p.wq);
    let k = s_in.dot(&p.wk);
    let v = s_in.dot(&p.wv);
    let mut attn = q.dot(&k.t()) * scale;
    softmax_rows(&mut attn);
    let ctx = attn.dot(&v);
    let frames: Vec<f64> = ctx.dot(&p.w_out).iter().map(|x| x + p.b_out).collect();
    let utt = frames.iter().sum::<f64>() / t_len as f64;
    Ok((frames, utt, BranchCache { q, k, v, attn, ctx }))
}

/// `d_frames` is the gradient with respect to each frame score, with any
/// pooled-score contribution already folded in. Returns parameter grads and `dS`.
pub fn branch_backward(
    s_in: ArrayView2<f64>,
    p: &BranchWeights<'_>,
    cache: &BranchCache,
    d_frames: &[f64],
) -> (BranchGrads, Array2<f64>) {
    let scale = 1.0 / (p.wq.ncols() as f64).sqrt();
    let df = ArrayView1::from(d_frames);
    let b_out = df.sum();
    let w_out = cache.ctx.t().dot(&df);
    // dCtx = df ⊗ w_out
    let d_ctx = df
        .insert_axis(Axis(1))
        .dot(&p.w_out.insert_axis(Axis(0)));
    let d_attn = d_ctx.dot(&cache.v.t());
    let d_v = cache.attn.t().dot(&d_ctx);
    let mut d_scores = d_attn.clone();
    for (mut row, (a, da)) in d_scores
        .rows_mut()
        .into_iter()
        .zip(cache.attn.rows().into_iter().zip(d_attn.rows()))
    {
        let dot = a.dot(&da);
        ndarray::Zip::from(&mut row).and(&a).for_each(|r, &av| *r = av * (*r - dot));
    }
    d_scores *= scale;
    let d_q = d_scores.dot(&cache.k);
    let d_k = d_scores.t().dot(&cache.q);
    let grads = BranchGrads {
        wq: s_in.t().dot(&d_q),
        wk: s_in.t().dot(&d_k),
        wv: s_in.t().dot(&d_v),
        w_out,
        b_out,
    };
    let ds = d_q.dot(&p.wq.t()) + d_k.dot(&p.wk.t()) + d_v.dot(&p.wv.t());
    (grads, ds)
}
