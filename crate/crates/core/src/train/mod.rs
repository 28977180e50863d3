//! Optimizer, training loop with early stopping, and finite-difference
//! gradient checking.

mod adam;
mod gradcheck;
mod trainer;

pub use adam::{adam_update, OptimizerState, BETA1, BETA2, EPSILON};
pub use gradcheck::{
    finite_difference_gradcheck, gradcheck_point, model_gradcheck, model_gradcheck_objective, relative_error, BlockReport,
    GradObjective, GradcheckConfig, GradcheckReport, ModelObjective, SignFlipped,
};
pub use trainer::{
    evaluate_loss, load_corpus, load_example, metrics_log_csv, metrics_log_header, predict, train_loop, Corpus,
    EpochRecord, Example, TrainConfig, TrainOutcome, TRAIN_KEYS,
};
