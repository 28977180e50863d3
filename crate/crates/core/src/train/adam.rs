use crate::error::{Error, Result};
use crate::model::ParameterSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per block, plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam step. Nothing is modified when a gradient block
/// is non-finite or the layouts disagree.
pub fn adam_update(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    if !grads.same_layout(params) || !state.m.same_layout(params) || !state.v.same_layout(params) {
        return Err(Error::Shape("gradient/optimizer layout differs from parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let blocks = params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                let delta = lr * m_hat / (v_hat.sqrt() + EPSILON);
                // Skipping zero steps keeps signed zeros bit-identical.
                if delta != 0.0 {
                    *p -= delta;
                }
            });
    }
    Ok(())
}
