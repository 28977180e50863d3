//! Network assembly: CNN over waveform features, adapter over augmented
//! embeddings, fusion, recurrent backbone, shared FC and four attention
//! branches.

mod checkpoint;
mod cnn;
mod config;
pub(crate) mod forward;
mod init;
mod layers;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    validate_layout, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cnn::{cnn_backward, cnn_forward, conv3x3_forward, layer_stride, CnnCache, CnnWeights, NUM_CONV_LAYERS};
pub use config::{ModelConfig, Variant, CNN_GROUPS, LAYERS_PER_GROUP, MIN_CNN_INPUT_WIDTH, MODEL_KEYS};
pub use forward::{
    forward_with_cache, loss_and_grad, model_backward, model_forward, synthetic_input, ModelCache, OutputGrads,
    UtteranceInput,
};
pub use init::{branch_name, conv_name, init_parameters, param_layout, recurrent_name, BlockSpec, InitKind};
pub use layers::{
    branch_backward, branch_forward, dense_relu, dense_relu_backward, fuse_features, BranchCache, BranchGrads,
    BranchWeights,
};
pub use params::ParameterSet;

use crate::objective::Target;

/// Scores for one target: one per frame plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPrediction {
    pub frame_scores: Vec<f64>,
    pub utterance_score: f64,
}

impl TargetPrediction {
    /// Pools `frames` by their mean.
    pub fn from_frames(frame_scores: Vec<f64>) -> Self {
        let utterance_score = frame_scores.iter().sum::<f64>() / frame_scores.len() as f64;
        Self {
            frame_scores,
            utterance_score,
        }
    }
}

/// Outputs of all four branches, indexed by [`Target::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub targets: [TargetPrediction; 4],
}

impl PredictionBundle {
    pub fn get(&self, t: Target) -> &TargetPrediction {
        &self.targets[t.index()]
    }

    pub fn utterance_scores(&self) -> [f64; 4] {
        std::array::from_fn(|k| self.targets[k].utterance_score)
    }

    pub fn bit_eq(&self, other: &PredictionBundle) -> bool {
        self.targets.iter().zip(&other.targets).all(|(a, b)| {
            a.utterance_score.to_bits() == b.utterance_score.to_bits()
                && a.frame_scores.len() == b.frame_scores.len()
                && a
                    .frame_scores
                    .iter()
                    .zip(&b.frame_scores)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(config: ModelConfig) -> crate::Result<Self> {
        let params = init_parameters(&config, config.seed)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, input: &UtteranceInput) -> crate::Result<PredictionBundle> {
        model_forward(&self.config, &self.params, input)
    }
}
