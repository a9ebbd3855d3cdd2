use ndarray::Array2;

use crate::error::{Error, Result};
use crate::predictor::metrics::task_error;
use crate::predictor::PredictorState;
use crate::stream::{Example, TaskKind};

/// Softmax of `accuracies / temperature`.
pub fn ensemble_weights(accuracies: &[f64], temperature: f64) -> Vec<f64> {
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = accuracies.iter().map(|a| ((a - max) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Weighted mixture of member predictions on the given task head.
pub fn ensemble_predict(
    members: &[(&PredictorState, f64)],
    task: &str,
    kind: TaskKind,
    examples: &[Example],
    temperature: f64,
) -> Result<Array2<f64>> {
    if members.is_empty() {
        return Err(Error::Invalid("ensemble needs at least one member".into()));
    }
    let accs: Vec<f64> = members.iter().map(|m| m.1).collect();
    let weights = ensemble_weights(&accs, temperature);
    mix(members.iter().map(|m| m.0), &weights, task, kind, examples)
}

fn mix<'a>(
    models: impl Iterator<Item = &'a PredictorState>,
    weights: &[f64],
    task: &str,
    kind: TaskKind,
    examples: &[Example],
) -> Result<Array2<f64>> {
    let mut out: Option<Array2<f64>> = None;
    for (m, w) in models.zip(weights) {
        let p = m.predict(task, kind, examples)? * *w;
        out = Some(match out {
            Some(acc) => acc + p,
            None => p,
        });
    }
    out.ok_or_else(|| Error::Invalid("ensemble needs at least one member".into()))
}

/// The model used to evaluate a task: one predictor or a weighted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskModel {
    Single(PredictorState),
    Ensemble { members: Vec<PredictorState>, weights: Vec<f64> },
}

impl TaskModel {
    pub fn predict(&self, task: &str, kind: TaskKind, examples: &[Example]) -> Result<Array2<f64>> {
        match self {
            TaskModel::Single(m) => m.predict(task, kind, examples),
            TaskModel::Ensemble { members, weights } => mix(members.iter(), weights, task, kind, examples),
        }
    }

    pub fn evaluate(&self, task: &str, kind: TaskKind, examples: &[Example]) -> Result<f64> {
        match self {
            TaskModel::Single(m) => m.evaluate(task, kind, examples),
            TaskModel::Ensemble { .. } => {
                let scores = self.predict(task, kind, examples)?;
                let labels: Vec<_> = examples.iter().map(|e| e.label.clone()).collect();
                Ok(task_error(&scores, &labels, kind))
            }
        }
    }

    /// The single model carried forward in the bank.
    pub fn primary(&self) -> &PredictorState {
        match self {
            TaskModel::Single(m) => m,
            TaskModel::Ensemble { members, weights } => {
                let best = (0..weights.len()).fold(0, |b, i| if weights[i] > weights[b] { i } else { b });
                &members[best]
            }
        }
    }
}
