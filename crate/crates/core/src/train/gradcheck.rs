use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::Example;
use crate::error::Result;
use crate::model::{
    forward_with_cache, init_parameters, loss_and_grad, model_forward, synthetic_input, ModelConfig, ParameterSet,
};
use crate::objective::{total_loss, LossWeights, Target, TargetScores};

/// A scalar function of a parameter set with an analytic gradient.
pub trait GradObjective {
    fn loss_and_grad(&self, p: &ParameterSet) -> Result<(f64, ParameterSet)>;

    /// Loss plus an identifier of the smooth piece containing `p`. Piecewise
    /// functions (ReLU, |x|) return different identifiers on either side of a kink.
    fn loss_with_signature(&self, p: &ParameterSet) -> Result<(f64, u64)>;

    /// `L(plus) - L(minus)` and both signatures. Implementations may compute
    /// the difference in a form with less cancellation than two separate losses.
    fn loss_difference(&self, plus: &ParameterSet, minus: &ParameterSet) -> Result<(f64, u64, u64)> {
        let (lp, sp) = self.loss_with_signature(plus)?;
        let (lm, sm) = self.loss_with_signature(minus)?;
        Ok((lp - lm, sp, sm))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Blocks with more coordinates than this are subsampled.
    pub coords_per_block: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            coords_per_block: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose difference stencil crossed a kink and were replaced.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Flat index, analytic and numeric derivative at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }

    /// Blocks over tolerance, and blocks where no coordinate could be checked.
    pub fn failing(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.checked == 0 || !(b.max_rel_error < self.tol))
            .map(|b| b.name.as_str())
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("block,checked,skipped,max_rel_error,status\n");
        for b in &self.blocks {
            let status = if b.checked > 0 && b.max_rel_error < self.tol { "ok" } else { "FAIL" };
            let _ = writeln!(s, "{},{},{},{:.3e},{status}", b.name, b.checked, b.skipped, b.max_rel_error);
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences against the analytic gradient, block by block.
pub fn finite_difference_gradcheck<O: GradObjective + ?Sized>(
    obj: &O,
    params: &ParameterSet,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let (_, grads) = obj.loss_and_grad(params)?;
    let (_, sig0) = obj.loss_with_signature(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut plus = params.clone();
    let mut minus = params.clone();
    let mut blocks = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let n = params.get(&name)?.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for k in order {
            if report.checked >= cfg.coords_per_block {
                break;
            }
            let orig = params.get(&name)?.iter().nth(k).copied().unwrap_or_default();
            set_flat(&mut plus, &name, k, orig + cfg.step)?;
            set_flat(&mut minus, &name, k, orig - cfg.step)?;
            let (diff, sp, sm) = obj.loss_difference(&plus, &minus)?;
            set_flat(&mut plus, &name, k, orig)?;
            set_flat(&mut minus, &name, k, orig)?;
            if sp != sig0 || sm != sig0 {
                report.skipped += 1;
                continue;
            }
            let numeric = diff / (2.0 * cfg.step);
            let analytic = grads.get(&name)?.iter().nth(k).copied().unwrap_or_default();
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((k, analytic, numeric));
            }
        }
        blocks.push(report);
    }
    Ok(GradcheckReport { tol: cfg.tol, blocks })
}

fn set_flat(p: &mut ParameterSet, name: &str, k: usize, v: f64) -> Result<()> {
    if let Some(x) = p.get_mut(name)?.iter_mut().nth(k) {
        *x = v;
    }
    Ok(())
}

/// Mean total loss of the model over a fixed set of utterances.
pub struct ModelObjective {
    pub config: ModelConfig,
    pub examples: Vec<Example>,
    pub weights: LossWeights,
}

impl GradObjective for ModelObjective {
    fn loss_and_grad(&self, p: &ParameterSet) -> Result<(f64, ParameterSet)> {
        let scale = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        let mut grads = p.zeros_like();
        for ex in &self.examples {
            let (l, g) = loss_and_grad(&self.config, p, &ex.input, &ex.targets, &self.weights)?;
            total += l;
            grads.add_assign(&g)?;
        }
        grads.scale(scale);
        Ok((total * scale, grads))
    }

    fn loss_with_signature(&self, p: &ParameterSet) -> Result<(f64, u64)> {
        let mut total = 0.0;
        let mut sig = 0u64;
        for ex in &self.examples {
            let (bundle, cache) = forward_with_cache(&self.config, p, &ex.input)?;
            total += total_loss(&bundle, &ex.targets, &self.weights)?;
            sig = sig.rotate_left(17) ^ cache.kink_signature();
        }
        Ok((total / self.examples.len() as f64, sig))
    }

    /// Uses `(a - y)^2 - (b - y)^2 = (a - b)(a + b - 2y)` per score, so the
    /// result does not inherit the rounding error of the full loss values.
    fn loss_difference(&self, plus: &ParameterSet, minus: &ParameterSet) -> Result<(f64, u64, u64)> {
        let (mut diff, mut sp, mut sm) = (0.0, 0u64, 0u64);
        for ex in &self.examples {
            let (bp, cp) = forward_with_cache(&self.config, plus, &ex.input)?;
            let (bm, cm) = forward_with_cache(&self.config, minus, &ex.input)?;
            sp = sp.rotate_left(17) ^ cp.kink_signature();
            sm = sm.rotate_left(17) ^ cm.kink_signature();
            for t in Target::ALL {
                let (a, b, y) = (bp.get(t), bm.get(t), ex.targets.get(t));
                let sq = |a: f64, b: f64| (a - b) * (a + b - 2.0 * y);
                let frames = a
                    .frame_scores
                    .iter()
                    .zip(&b.frame_scores)
                    .map(|(&fa, &fb)| sq(fa, fb))
                    .sum::<f64>()
                    / a.frame_scores.len() as f64;
                diff += self.weights.gamma[t.index()]
                    * (sq(a.utterance_score, b.utterance_score) + self.weights.frame_weight * frames);
            }
        }
        Ok((diff / self.examples.len() as f64, sp, sm))
    }
}

/// Wraps an objective and negates the analytic gradient of one block.
pub struct SignFlipped<'a, O: ?Sized> {
    pub inner: &'a O,
    pub block: String,
}

impl<O: GradObjective + ?Sized> GradObjective for SignFlipped<'_, O> {
    fn loss_and_grad(&self, p: &ParameterSet) -> Result<(f64, ParameterSet)> {
        let (l, mut g) = self.inner.loss_and_grad(p)?;
        g.get_mut(&self.block)?.mapv_inplace(|v| -v);
        Ok((l, g))
    }

    fn loss_with_signature(&self, p: &ParameterSet) -> Result<(f64, u64)> {
        self.inner.loss_with_signature(p)
    }
}

/// Parameters for checking `cfg`: the seeded initialization with every bias
/// nudged off zero, so no ReLU sits exactly on its kink.
pub fn gradcheck_point(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    let mut p = init_parameters(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (name, block) in p.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".b_out") {
            block.mapv_inplace(|v| v + rng.random_range(-0.05..0.05));
        }
    }
    Ok(p)
}

/// Two seeded 12-frame utterances whose labels sit 0.002 to 0.01 away from
/// the model's own utterance scores at `params`. Small residuals keep the
/// rounding error of the loss well below the difference quotient.
pub fn model_gradcheck_objective(cfg: &ModelConfig, params: &ParameterSet, seed: u64) -> Result<ModelObjective> {
    let mut examples = Vec::new();
    for k in 0..2u64 {
        let input = synthetic_input(cfg, 12, seed.wrapping_add(1 + k))?;
        let u = model_forward(cfg, params, &input)?.utterance_scores();
        // Same-signed offsets, so no gradient cancels between the two utterances.
        let off = |j: usize| 0.002 * (j + 1 + k as usize) as f64;
        examples.push(Example {
            id: format!("gc{k}"),
            input,
            targets: TargetScores {
                intelligibility: u[0] + off(0),
                cer_whisper_inv: u[1] - off(1),
                cer_google_inv: u[2] + off(2),
                stoi: u[3] - off(3),
            },
        });
    }
    Ok(ModelObjective {
        config: cfg.clone(),
        examples,
        weights: LossWeights::default(),
    })
}

/// Gradient check of the whole model at [`gradcheck_point`].
pub fn model_gradcheck(cfg: &ModelConfig, gc: &GradcheckConfig) -> Result<GradcheckReport> {
    let params = gradcheck_point(cfg, cfg.seed)?;
    let obj = model_gradcheck_objective(cfg, &params, cfg.seed)?;
    finite_difference_gradcheck(&obj, &params, gc)
}
