use serde::Serialize;

use crate::error::{Error, Result};
use crate::hpo::{apply_hparams, best_trial, Evaluation, Hparams, Trial, MT_LAMBDA};
use crate::predictor::{input_shape, train, train_multitask, CurvePoint, PredictorState, TaskData, TrainReport};
use crate::protocol::CausalView;
use crate::seed::derive_seed;

use super::ensemble::{ensemble_weights, TaskModel};
use super::relatedness::{relatedness_scores, RelatednessScore, PRETRAINED_SOURCE};
use super::state::{BankEntry, MetaLearnerState, Provenance};
use super::strategy::{Family, LearnerConfig, Strategy};

/// Result of learning one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub model: TaskModel,
    pub val_error: f64,
    /// Every trial plus relatedness embedding and frozen-model training.
    pub flops: u64,
    pub hparams: Hparams,
    pub provenance: Provenance,
    pub learning_curve: Vec<CurvePoint>,
    pub trials: Vec<Trial>,
    pub relatedness: Vec<RelatednessScore>,
    pub aux_tasks: Vec<String>,
}

/// A learner driven task by task through a [`CausalView`].
pub trait MetaLearner {
    /// Configuration echo stored with every record.
    fn describe(&self) -> serde_json::Value;

    /// Learns the view's current task and updates the internal state.
    fn train_task(&mut self, view: &CausalView<'_>) -> Result<TaskOutcome>;

    fn snapshot(&self) -> Vec<u8>;

    fn restore(&mut self, bytes: &[u8]) -> Result<()>;

    /// Returns to the initial state.
    fn reset(&mut self);
}

fn argmax<'a, T>(candidates: impl Iterator<Item = (&'a str, T)>, scores: &[RelatednessScore]) -> Option<(&'a str, T)> {
    let mut best: Option<(f64, (&'a str, T))> = None;
    for (id, item) in candidates {
        let s = scores.iter().find(|r| r.source == id).map_or(f64::NEG_INFINITY, |r| r.score);
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, (id, item)));
        }
    }
    best.map(|b| b.1)
}

/// Initialization for the next task. `None` means a fresh backbone.
pub fn select_init<'s>(
    strategy: &Strategy,
    state: &'s MetaLearnerState,
    scores: Option<&[RelatednessScore]>,
) -> Result<(Option<&'s PredictorState>, Provenance)> {
    let scratch = Ok((None, Provenance::Scratch));
    let pretrained = || state.pretrained.as_ref().ok_or_else(|| Error::MissingPretrained(strategy.label()));
    match strategy.family {
        Family::Indep => scratch,
        Family::Pt => Ok((Some(pretrained()?), Provenance::Pretrained)),
        Family::FtPrev => match state.bank_in_order().last() {
            Some((id, e)) => Ok((Some(&e.model), Provenance::Task(id.to_string()))),
            None => scratch,
        },
        Family::FtS | Family::FtD | Family::Mt => {
            if state.bank.is_empty() {
                return scratch;
            }
            let scores = scores.ok_or_else(|| Error::Invalid("relatedness scores required".into()))?;
            let (id, e) = argmax(state.bank_in_order(), scores).expect("bank nonempty");
            Ok((Some(&e.model), Provenance::Task(id.to_string())))
        }
        Family::PtFt => {
            let pt = pretrained()?;
            if state.bank.is_empty() {
                return Ok((Some(pt), Provenance::Pretrained));
            }
            let scores = scores.ok_or_else(|| Error::Invalid("relatedness scores required".into()))?;
            let candidates =
                std::iter::once((PRETRAINED_SOURCE, pt)).chain(state.bank_in_order().map(|(id, e)| (id, &e.model)));
            let (id, m) = argmax(candidates, scores).expect("candidates nonempty");
            let prov = if id == PRETRAINED_SOURCE { Provenance::Pretrained } else { Provenance::Task(id.to_string()) };
            Ok((Some(m), prov))
        }
    }
}

/// The `k` highest-scoring bank tasks, ties to the earlier task.
pub fn top_k(state: &MetaLearnerState, scores: &[RelatednessScore], k: usize) -> Vec<String> {
    let mut ranked: Vec<(f64, &str)> = state
        .bank_in_order()
        .map(|(id, _)| (scores.iter().find(|r| r.source == id).map_or(f64::NEG_INFINITY, |r| r.score), id))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    ranked.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

/// The learner families configured by a [`Strategy`].
#[derive(Debug, Clone)]
pub struct StrategyLearner {
    config: LearnerConfig,
    state: MetaLearnerState,
    initial: MetaLearnerState,
}

#[derive(Serialize)]
struct Echo<'a> {
    strategy: &'a Strategy,
    label: String,
    engine: &'a crate::hpo::Engine,
    n_trials: usize,
    num_updates: usize,
    seed: u64,
}

impl StrategyLearner {
    /// Loads the pretrained model from the strategy's source when required.
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let pretrained = match &config.strategy.pretrained_source {
            Some(p) if config.strategy.family.needs_pretrained() => Some(PredictorState::load(p)?),
            _ => None,
        };
        Ok(Self::from_state(config, MetaLearnerState::with_pretrained(pretrained)))
    }

    /// Uses an in-memory pretrained model instead of the strategy's source.
    pub fn with_pretrained(config: LearnerConfig, pretrained: PredictorState) -> Result<Self> {
        let mut c = config;
        if c.strategy.family.needs_pretrained() && c.strategy.pretrained_source.is_none() {
            c.strategy.pretrained_source = Some("<memory>".into());
        }
        c.validate()?;
        Ok(Self::from_state(c, MetaLearnerState::with_pretrained(Some(pretrained))))
    }

    fn from_state(mut config: LearnerConfig, state: MetaLearnerState) -> Self {
        if config.strategy.family == Family::Mt {
            config.space = config.space.with_mt_lambda();
        }
        Self { config, initial: state.clone(), state }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn state(&self) -> &MetaLearnerState {
        &self.state
    }

    fn scores(&self, data: &TaskData<'_>, seed: u64) -> Result<Option<Vec<RelatednessScore>>> {
        let family = self.config.strategy.family;
        if !family.uses_relatedness() || self.state.bank.is_empty() {
            return Ok(None);
        }
        let mut candidates: Vec<(&str, &PredictorState)> = Vec::new();
        match family {
            Family::FtS => {
                candidates.extend(self.state.frozen_in_order().filter(|(id, _)| self.state.bank.contains_key(*id)))
            }
            Family::PtFt => {
                if let Some(p) = &self.state.pretrained {
                    candidates.push((PRETRAINED_SOURCE, p));
                }
                candidates.extend(self.state.bank_in_order().map(|(id, e)| (id, &e.model)));
            }
            _ => candidates.extend(self.state.bank_in_order().map(|(id, e)| (id, &e.model))),
        }
        relatedness_scores(data, &candidates, &self.config.knn, seed).map(Some)
    }

    fn frozen_model(&self, data: TaskData<'_>, seed: u64) -> Result<TrainReport> {
        let mut cfg = self.config.predictor.clone();
        if let Some(n) = self.config.frozen_updates {
            cfg.num_updates = n;
        }
        cfg.eval_every = 0;
        cfg.seed = seed;
        train(data, &cfg, None)
    }
}

type TrialArtifact = (TrainReport, Provenance);

impl MetaLearner for StrategyLearner {
    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(Echo {
            strategy: &self.config.strategy,
            label: self.config.strategy.label(),
            engine: &self.config.engine,
            n_trials: self.config.n_trials,
            num_updates: self.config.predictor.num_updates,
            seed: self.config.seed,
        })
        .expect("echo serializes")
    }

    fn train_task(&mut self, view: &CausalView<'_>) -> Result<TaskOutcome> {
        let data = view.current();
        let id = data.id.to_string();
        if self.state.position(&id).is_some() {
            return Err(Error::Revisit(id));
        }
        if self.state.dataset_refs.len() != view.cursor() {
            return Err(Error::Invalid(format!(
                "learner has seen {} tasks but the view is at task {}",
                self.state.dataset_refs.len(),
                view.cursor()
            )));
        }
        let cfg = &self.config;
        let task_seed = derive_seed(cfg.seed, &[&id]);

        let scores = self.scores(&data, derive_seed(task_seed, &["relatedness"]))?;
        let embed_flops: u64 =
            if cfg.charge_embedding_flops { scores.iter().flatten().map(|s| s.embed_flops).sum() } else { 0 };
        let (init, provenance) = select_init(&cfg.strategy, &self.state, scores.as_deref())?;

        let aux_ids = match (&scores, cfg.strategy.family) {
            (Some(s), Family::Mt) => top_k(&self.state, s, cfg.strategy.mt_k),
            _ => Vec::new(),
        };
        let aux: Vec<TaskData<'_>> = aux_ids.iter().map(|a| view.task_by_id(a)).collect::<Result<_>>()?;

        let objective = |trial: usize, h: &Hparams| -> Result<Evaluation<TrialArtifact>> {
            let mut pc = apply_hparams(&cfg.predictor, h)?;
            pc.seed = derive_seed(task_seed, &["trial", &trial.to_string()]);
            let shape = input_shape(&data.train[0].input, pc.input_resolution);
            // a trial whose architecture cannot take the chosen weights starts fresh
            let (init, prov) = match init {
                Some(m) if m.arch() == &pc.arch && m.input_shape() == shape => (Some(m), provenance.clone()),
                _ => (None, Provenance::Scratch),
            };
            let report = if aux.is_empty() {
                train(data, &pc, init)?
            } else {
                let lambda = h.get(MT_LAMBDA).and_then(|v| v.as_f64()).unwrap_or(1.0);
                train_multitask(data, &aux, lambda, &pc, init)?
            };
            Ok(Evaluation { val_error: report.val_error, flops: report.flops, artifact: (report, prov) })
        };
        let results = cfg.engine.search(&cfg.space, cfg.n_trials, derive_seed(task_seed, &["search"]), objective)?;

        let trials: Vec<Trial> = results.iter().map(|r| r.trial.clone()).collect();
        let ok: Vec<Trial> = trials.iter().filter(|t| t.failure.is_none()).cloned().collect();
        if ok.is_empty() {
            let last = trials.last().and_then(|t| t.failure.clone()).unwrap_or_default();
            return Err(Error::AllTrialsFailed { task: id, trials: trials.len(), last });
        }
        let best = best_trial(&ok)?.clone();
        let mut artifacts: Vec<Option<TrialArtifact>> = results.into_iter().map(|r| r.artifact).collect();
        let (best_report, best_prov) = artifacts[best.index].take().expect("successful trial has an artifact");

        let frozen = if cfg.strategy.family == Family::FtS {
            Some(self.frozen_model(data, derive_seed(task_seed, &["frozen"]))?)
        } else {
            None
        };
        let frozen_flops = frozen.as_ref().filter(|_| cfg.charge_frozen_flops).map_or(0, |r| r.flops);
        let flops = trials.iter().map(|t| t.flops).sum::<u64>() + embed_flops + frozen_flops;

        let (model, val_error) = if cfg.strategy.ensemble && ok.len() > 1 {
            let mut members = vec![best_report.final_state.clone()];
            let mut accs = vec![1.0 - best.val_error];
            for t in ok.iter().filter(|t| t.index != best.index) {
                let (r, _) = artifacts[t.index].take().expect("successful trial has an artifact");
                members.push(r.final_state);
                accs.push(1.0 - t.val_error);
            }
            let weights = ensemble_weights(&accs, cfg.strategy.ensemble_temperature);
            let model = TaskModel::Ensemble { members, weights };
            let e = model.evaluate(&id, data.kind, data.val)?;
            (model, e)
        } else {
            (TaskModel::Single(best_report.final_state.clone()), best.val_error)
        };

        self.state.dataset_refs.push(id.clone());
        if cfg.strategy.family.keeps_bank() {
            self.state.bank.insert(
                id.clone(),
                BankEntry { model: model.primary().clone(), val_error, provenance: best_prov.clone() },
            );
        }
        if let Some(f) = frozen {
            self.state.frozen.insert(id.clone(), f.final_state);
        }

        Ok(TaskOutcome {
            model,
            val_error,
            flops,
            hparams: best.hparams,
            provenance: best_prov,
            learning_curve: best_report.learning_curve,
            trials,
            relatedness: scores.unwrap_or_default(),
            aux_tasks: aux_ids,
        })
    }

    fn snapshot(&self) -> Vec<u8> {
        self.state.to_bytes()
    }

    fn restore(&mut self, bytes: &[u8]) -> Result<()> {
        let mut s = MetaLearnerState::from_bytes(bytes)?;
        if s.pretrained.is_none() {
            s.pretrained = self.initial.pretrained.clone();
        }
        self.state = s;
        Ok(())
    }

    fn reset(&mut self) {
        self.state = self.initial.clone();
    }
}
