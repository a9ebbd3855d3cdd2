#![allow(dead_code)]

use streambench::hpo::{Dimension, SearchSpace, Value, LABEL_SMOOTHING, LEARNING_RATE};
use streambench::metalearner::{Family, LearnerConfig, MetaLearner, Strategy, StrategyLearner, TaskOutcome};
use streambench::predictor::{ArchSpec, PredictorConfig};
use streambench::protocol::CausalView;
use streambench::stream::{make_synthetic_stream, SplitSizes, Stream, SyntheticSpec};

pub fn sizes(train: usize, val: usize, test: usize) -> SplitSizes {
    SplitSizes { train, val, test }
}

/// One fixed configuration, repeated `n` times by the grid.
pub fn fixed_space(lr: f64) -> SearchSpace {
    SearchSpace::new(vec![
        Dimension::grid(LEARNING_RATE, vec![Value::Real(lr)]),
        Dimension::grid(LABEL_SMOOTHING, vec![Value::Real(0.0)]),
    ])
    .unwrap()
}

pub fn predictor(num_updates: usize, seed: u64) -> PredictorConfig {
    PredictorConfig {
        arch: ArchSpec::mlp(&[32]),
        num_updates,
        max_batch: 32,
        batch_fraction: 0.05,
        seed,
        ..PredictorConfig::default()
    }
}

pub fn learner(
    family: Family,
    predictor: PredictorConfig,
    space: SearchSpace,
    n_trials: usize,
    seed: u64,
) -> StrategyLearner {
    StrategyLearner::new(LearnerConfig::new(Strategy::new(family), predictor, space, n_trials, seed)).unwrap()
}

/// Runs the learner over the first `n` tasks, returning every outcome.
pub fn walk(learner: &mut StrategyLearner, stream: &Stream, n: usize) -> Vec<TaskOutcome> {
    (0..n).map(|i| learner.train_task(&CausalView::new(stream, i).unwrap()).unwrap()).collect()
}

pub fn synthetic(spec: &SyntheticSpec) -> Stream {
    make_synthetic_stream(spec).unwrap()
}
