use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::{apply_hparams, best_trial, Engine, Evaluation, SearchSpace};
use crate::predictor::{input_shape, train, PredictorConfig, PredictorState, TaskData};
use crate::seed::derive_seed;
use crate::stream::{Stream, Task};

/// Budget of each training run in a transfer-matrix experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub predictor: PredictorConfig,
    pub space: SearchSpace,
    pub engine: Engine,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub task_ids: Vec<String>,
    /// Test error of the best scratch run per task.
    pub reference_errors: Vec<f64>,
    /// `(i, j) -> reference error on j - error on j finetuned from i`, `i < j`.
    #[serde(with = "pairs")]
    pub entries: BTreeMap<(usize, usize), f64>,
    /// Training runs performed, each with `n_trials` trials.
    pub runs: usize,
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(usize, usize), f64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(&(i, j), &d)| (i, j, d)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), f64>, D::Error> {
        Ok(Vec::<(usize, usize, f64)>::deserialize(d)?.into_iter().map(|(i, j, v)| ((i, j), v)).collect())
    }
}

impl TransferMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries.get(&(i, j)).copied()
    }
}

struct Run {
    state: PredictorState,
    test_error: f64,
}

fn best_run(task: &Task, init: Option<&PredictorState>, config: &TransferConfig, tag: &str) -> Result<Run> {
    let data = TaskData::of(task);
    let base_seed = derive_seed(config.seed, &[&task.id, tag]);
    let objective = |trial: usize, h: &crate::hpo::Hparams| -> Result<Evaluation<PredictorState>> {
        let mut pc: PredictorConfig = apply_hparams(&config.predictor, h)?;
        pc.seed = derive_seed(base_seed, &["trial", &trial.to_string()]);
        let shape = input_shape(&data.train[0].input, pc.input_resolution);
        let init = init.filter(|m| m.arch() == &pc.arch && m.input_shape() == shape);
        let r = train(data, &pc, init)?;
        Ok(Evaluation { val_error: r.val_error, flops: r.flops, artifact: r.final_state })
    };
    let results = config.engine.search(&config.space, config.n_trials, base_seed, objective)?;
    let ok: Vec<_> = results.iter().filter(|r| r.trial.failure.is_none()).map(|r| r.trial.clone()).collect();
    if ok.is_empty() {
        return Err(Error::AllTrialsFailed { task: task.id.clone(), trials: results.len(), last: String::new() });
    }
    let best = best_trial(&ok)?.index;
    let state = results.into_iter().nth(best).and_then(|r| r.artifact).expect("best trial succeeded");
    let test_error = state.evaluate(&task.id, task.kind, task.test())?;
    Ok(Run { state, test_error })
}

/// Trains every task from scratch, then every later task from each earlier
/// task's best scratch model, and reports the test-error gains.
pub fn transfer_matrix(stream: &Stream, config: &TransferConfig) -> Result<TransferMatrix> {
    let tasks = stream.tasks();
    let reference: Vec<Run> = tasks.iter().map(|t| best_run(t, None, config, "reference")).collect::<Result<_>>()?;
    let mut runs = tasks.len();
    let mut entries = BTreeMap::new();
    for (i, source) in reference.iter().enumerate() {
        for j in i + 1..tasks.len() {
            let tag = format!("from {}", tasks[i].id);
            let ft = best_run(&tasks[j], Some(&source.state), config, &tag)?;
            entries.insert((i, j), reference[j].test_error - ft.test_error);
            runs += 1;
        }
    }
    Ok(TransferMatrix {
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        reference_errors: reference.iter().map(|r| r.test_error).collect(),
        entries,
        runs,
    })
}
