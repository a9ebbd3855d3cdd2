use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::{Engine, SearchSpace};
use crate::predictor::PredictorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Every task from a fresh initialization.
    Indep,
    /// Finetune from the most recent task's model.
    FtPrev,
    /// Finetune from the most related task, relatedness measured with frozen
    /// independently trained models.
    FtS,
    /// Finetune from the most related task, relatedness measured with the
    /// live model bank.
    FtD,
    /// Like `FtD`, plus co-training on the top-k related tasks.
    Mt,
    /// Finetune from a fixed pretrained model.
    Pt,
    /// Like `FtD` with the pretrained model as an extra candidate.
    PtFt,
}

impl Family {
    pub const ALL: [Family; 7] =
        [Family::Indep, Family::FtPrev, Family::FtS, Family::FtD, Family::Mt, Family::Pt, Family::PtFt];

    pub fn name(self) -> &'static str {
        match self {
            Family::Indep => "indep",
            Family::FtPrev => "ft_prev",
            Family::FtS => "ft_s",
            Family::FtD => "ft_d",
            Family::Mt => "mt",
            Family::Pt => "pt",
            Family::PtFt => "pt_ft",
        }
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(self, Family::Pt | Family::PtFt)
    }

    /// Families that score candidate models by kNN relatedness.
    pub fn uses_relatedness(self) -> bool {
        matches!(self, Family::FtS | Family::FtD | Family::Mt | Family::PtFt)
    }

    /// Families whose chosen models are kept for later initialization.
    pub fn keeps_bank(self) -> bool {
        !matches!(self, Family::Indep | Family::Pt)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy family `{s}`")))
    }
}

fn default_k() -> usize {
    1
}

fn default_temperature() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub family: Family,
    /// Number of auxiliary tasks for `Mt`.
    #[serde(default = "default_k")]
    pub mt_k: usize,
    #[serde(default)]
    pub ensemble: bool,
    #[serde(default = "default_temperature")]
    pub ensemble_temperature: f64,
    /// Serialized predictor state used by `Pt` and `PtFt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_source: Option<PathBuf>,
}

impl Strategy {
    pub fn new(family: Family) -> Self {
        Self { family, mt_k: 1, ensemble: false, ensemble_temperature: 0.1, pretrained_source: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.needs_pretrained() != self.pretrained_source.is_some() {
            return Err(Error::Config(format!(
                "strategy {}: pretrained_source is required exactly for pt and pt_ft",
                self.family
            )));
        }
        if self.mt_k == 0 {
            return Err(Error::Config("mt_k must be at least 1".into()));
        }
        if !(self.ensemble_temperature > 0.0) {
            return Err(Error::Config("ensemble_temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut s = self.family.name().to_string();
        if self.family == Family::Mt {
            s.push_str(&format!("-top{}", self.mt_k));
        }
        if self.ensemble {
            s.push_str("-ens");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    /// Nearest neighbours voting (1 = plain nearest neighbour).
    pub k: usize,
    pub max_train: usize,
    pub max_val: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 1, max_train: 10_000, max_val: 5_000 }
    }
}

fn yes() -> bool {
    true
}

/// Everything a strategy-driven learner needs besides the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub strategy: Strategy,
    pub predictor: PredictorConfig,
    pub space: SearchSpace,
    pub engine: Engine,
    pub n_trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub knn: KnnConfig,
    /// Charge relatedness embedding forward passes to the task.
    #[serde(default = "yes")]
    pub charge_embedding_flops: bool,
    /// Updates of the scratch model trained per task for frozen-feature
    /// relatedness; defaults to the predictor's `num_updates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_updates: Option<usize>,
    /// Charge those scratch models to the task.
    #[serde(default = "yes")]
    pub charge_frozen_flops: bool,
}

impl LearnerConfig {
    pub fn new(strategy: Strategy, predictor: PredictorConfig, space: SearchSpace, n_trials: usize, seed: u64) -> Self {
        Self {
            strategy,
            predictor,
            space,
            engine: Engine::Random,
            n_trials,
            seed,
            knn: KnnConfig::default(),
            charge_embedding_flops: true,
            frozen_updates: None,
            charge_frozen_flops: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.predictor.validate()?;
        self.space.validate()?;
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if matches!(self.engine, Engine::Bayesian { .. }) && self.n_trials < 2 {
            return Err(Error::Config("bayesian search needs at least 2 trials".into()));
        }
        if self.knn.k == 0 || self.knn.max_train == 0 || self.knn.max_val == 0 {
            return Err(Error::Config("knn settings must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("FT-d".parse::<Family>().unwrap(), Family::FtD);
        assert_eq!("PT+FT".parse::<Family>().unwrap(), Family::PtFt);
        assert!("ft_x".parse::<Family>().is_err());
    }

    #[test]
    fn pretrained_required_iff_pt() {
        assert!(Strategy::new(Family::Pt).validate().is_err());
        let mut s = Strategy::new(Family::FtD);
        s.pretrained_source = Some("x".into());
        assert!(s.validate().is_err());
        s.family = Family::PtFt;
        assert!(s.validate().is_ok());
    }
}
