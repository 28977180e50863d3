//! Multi-target non-intrusive speech intelligibility prediction.
//!
//! Per-frame speech embeddings are augmented with mean, standard deviation
//! and softmax entropy, passed through an adapter, and fused with a CNN over
//! STFT magnitudes and a learnable sinc filterbank. A bidirectional sLSTM (or
//! LSTM) backbone feeds four attention branches that score intelligibility,
//! two inverted character error rates and STOI at frame and utterance level.

pub mod dsp;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod recurrent;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use ingest::{EmbeddingSequence, ManifestEntry, Split, Waveform};
pub use model::{Checkpoint, Model, ModelConfig, ParameterSet, PredictionBundle, TargetPrediction, Variant};
pub use objective::{LossWeights, Target, TargetScores};
pub use recurrent::{CellKind, ForgetMode};
pub use stats::{AugmentedFeatureSequence, FrameStats};
pub use train::{OptimizerState, TrainConfig};
