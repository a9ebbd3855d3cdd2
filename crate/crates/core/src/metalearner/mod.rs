//! Strategies that decide, task by task, how each predictor is initialized
//! and trained, and what knowledge is carried forward.

mod ensemble;
mod learner;
mod relatedness;
mod state;
mod strategy;

pub use ensemble::{ensemble_predict, ensemble_weights, TaskModel};
pub use learner::{select_init, top_k, MetaLearner, StrategyLearner, TaskOutcome};
pub use relatedness::{knn_score, probe_split, relatedness_scores, RelatednessScore, PRETRAINED_SOURCE};
pub use state::{BankEntry, MetaLearnerState, Provenance};
pub use strategy::{Family, KnnConfig, LearnerConfig, Strategy};
