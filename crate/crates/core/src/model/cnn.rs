use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView4};

use super::config::{CNN_GROUPS, LAYERS_PER_GROUP, MIN_CNN_INPUT_WIDTH};
use crate::error::{Error, Result};

/// Feature-axis stride of conv layer `layer` (the last of each group reduces by 3).
pub fn layer_stride(layer: usize) -> usize {
    if layer % LAYERS_PER_GROUP == LAYERS_PER_GROUP - 1 {
        3
    } else {
        1
    }
}

pub const NUM_CONV_LAYERS: usize = CNN_GROUPS * LAYERS_PER_GROUP;

/// 3×3 convolution over `(time, feature)`, padding 1 on both axes, stride 1
/// in time and `stride` along features. Input and output are `C × T × W`.
pub fn conv3x3_forward(
    x: &Array3<f64>,
    weight: ArrayView4<f64>,
    bias: &[f64],
    stride: usize,
) -> Array3<f64> {
    let (c_in, t_len, w_in) = x.dim();
    let c_out = weight.shape()[0];
    debug_assert_eq!(weight.shape()[1], c_in);
    let w_out = (w_in - 1) / stride + 1;
    let mut out = Array3::<f64>::zeros((c_out, t_len, w_out));
    let xs = x.as_slice().expect("standard layout");
    for co in 0..c_out {
        let mut plane = out.index_axis_mut(ndarray::Axis(0), co);
        let ps = plane.as_slice_mut().expect("standard layout");
        ps.fill(bias[co]);
        for ci in 0..c_in {
            let xc = &xs[ci * t_len * w_in..(ci + 1) * t_len * w_in];
            for dt in 0..3 {
                for df in 0..3 {
                    let k = weight[[co, ci, dt, df]];
                    if k == 0.0 {
                        continue;
                    }
                    for t in 0..t_len {
                        let ts = t as isize + dt as isize - 1;
                        if ts < 0 || ts >= t_len as isize {
                            continue;
                        }
                        let row = &xc[ts as usize * w_in..(ts as usize + 1) * w_in];
                        let orow = &mut ps[t * w_out..(t + 1) * w_out];
                        for (j, o) in orow.iter_mut().enumerate() {
                            let f = (j * stride + df) as isize - 1;
                            if f >= 0 && (f as usize) < w_in {
                                *o += k * row[f as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a 3×3 conv given `dz` with respect to its (pre-activation) output.
/// Returns `(d_weight, d_bias, d_input)`.
pub fn conv3x3_backward(
    x: &Array3<f64>,
    weight: ArrayView4<f64>,
    stride: usize,
    dz: &Array3<f64>,
) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
    let (c_in, t_len, w_in) = x.dim();
    let (c_out, _, w_out) = dz.dim();
    let mut dw = Array4::<f64>::zeros((c_out, c_in, 3, 3));
    let db = Array1::from_iter((0..c_out).map(|co| dz.index_axis(ndarray::Axis(0), co).sum()));
    let mut dx = Array3::<f64>::zeros((c_in, t_len, w_in));
    let xs = x.as_slice().expect("standard layout");
    let dzs = dz.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for co in 0..c_out {
        let g = &dzs[co * t_len * w_out..(co + 1) * t_len * w_out];
        for ci in 0..c_in {
            let xc = &xs[ci * t_len * w_in..(ci + 1) * t_len * w_in];
            let dxc = &mut dxs[ci * t_len * w_in..(ci + 1) * t_len * w_in];
            for dt in 0..3 {
                for df in 0..3 {
                    let k = weight[[co, ci, dt, df]];
                    let mut acc = 0.0;
                    for t in 0..t_len {
                        let ts = t as isize + dt as isize - 1;
                        if ts < 0 || ts >= t_len as isize {
                            continue;
                        }
                        let base = ts as usize * w_in;
                        let grow = &g[t * w_out..(t + 1) * w_out];
                        for (j, &gv) in grow.iter().enumerate() {
                            let f = (j * stride + df) as isize - 1;
                            if f >= 0 && (f as usize) < w_in {
                                acc += gv * xc[base + f as usize];
                                dxc[base + f as usize] += k * gv;
                            }
                        }
                    }
                    dw[[co, ci, dt, df]] += acc;
                }
            }
        }
    }
    (dw, db, dx)
}

/// Parameters of the 12-layer CNN, borrowed from a parameter set.
pub struct CnnWeights<'a> {
    pub weights: Vec<ArrayView4<'a, f64>>,
    pub biases: Vec<&'a [f64]>,
}

/// Post-ReLU activations of every layer; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct CnnCache {
    pub acts: Vec<Array3<f64>>,
}

fn flatten(x: &Array3<f64>) -> Array2<f64> {
    let (c, t, w) = x.dim();
    Array2::from_shape_fn((t, c * w), |(ti, k)| x[[k / w, ti, k % w]])
}

fn unflatten(d: ArrayView2<f64>, c: usize, w: usize) -> Array3<f64> {
    let t = d.nrows();
    Array3::from_shape_fn((c, t, w), |(ci, ti, j)| d[[ti, ci * w + j]])
}

/// `T × W` features to `T × (C4 · W4)`, flattened channel-major per frame.
pub fn cnn_forward(features: ArrayView2<f64>, p: &CnnWeights<'_>) -> Result<(Array2<f64>, CnnCache)> {
    let (t_len, width) = features.dim();
    if t_len == 0 {
        return Err(Error::InvalidInput("CNN input has no frames".into()));
    }
    if width < MIN_CNN_INPUT_WIDTH {
        return Err(Error::Shape(format!(
            "CNN input width {width} is too small for four stride-3 reductions (need >= {MIN_CNN_INPUT_WIDTH})"
        )));
    }
    if p.weights.len() != NUM_CONV_LAYERS {
        return Err(Error::Shape(format!("expected {NUM_CONV_LAYERS} conv layers")));
    }
    let mut acts = Vec::with_capacity(NUM_CONV_LAYERS + 1);
    acts.push(Array3::from_shape_vec((1, t_len, width), features.iter().copied().collect()).expect("sizes match"));
    for l in 0..NUM_CONV_LAYERS {
        let x = &acts[l];
        if p.weights[l].shape()[1] != x.dim().0 {
            return Err(Error::Shape(format!(
                "conv layer {l} expects {} input channels, got {}",
                p.weights[l].shape()[1],
                x.dim().0
            )));
        }
        let mut z = conv3x3_forward(x, p.weights[l], p.biases[l], layer_stride(l));
        z.mapv_inplace(|v| v.max(0.0));
        acts.push(z);
    }
    let out = flatten(&acts[NUM_CONV_LAYERS]);
    Ok((out, CnnCache { acts }))
}

/// Returns per-layer `(d_weight, d_bias)` and the gradient with respect to the input features.
pub fn cnn_backward(
    p: &CnnWeights<'_>,
    cache: &CnnCache,
    upstream: ArrayView2<f64>,
) -> (Vec<(Array4<f64>, Array1<f64>)>, Array2<f64>) {
    let last = &cache.acts[NUM_CONV_LAYERS];
    let (c, _, w) = last.dim();
    let mut d = unflatten(upstream, c, w);
    let mut grads = Vec::with_capacity(NUM_CONV_LAYERS);
    for l in (0..NUM_CONV_LAYERS).rev() {
        let y = &cache.acts[l + 1];
        ndarray::Zip::from(&mut d).and(y).for_each(|g, &v| {
            if v <= 0.0 {
                *g = 0.0
            }
        });
        let (dw, db, dx) = conv3x3_backward(&cache.acts[l], p.weights[l], layer_stride(l), &d);
        grads.push((dw, db));
        d = dx;
    }
    grads.reverse();
    (grads, d.index_axis_move(ndarray::Axis(0), 0))
}
