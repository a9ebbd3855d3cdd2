use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streambench::hpo::{Engine, SearchSpace};
use streambench::metalearner::{KnnConfig, LearnerConfig, Strategy};
use streambench::predictor::PredictorConfig;
use streambench::stream::{SyntheticSpec, Variant};
use streambench::{Error, Result};

pub const TRIALS: (usize, usize) = (2, 32);
pub const STANDARD_UPDATES: (usize, usize) = (10_000, 100_000);
pub const CHEAP_UPDATES: (usize, usize) = (1, 10_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetaTrain,
    MetaTest,
    TransferMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    #[default]
    Standard,
    Cheap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StreamSource {
    /// JSONL manifest; split files default to the prepared-task cache.
    Manifest {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_root: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
    /// One prepared single-label task cut into class-disjoint tasks.
    ClassPartition {
        task: String,
        partitions: usize,
        seed: u64,
        /// Meta-train length; defaults to all but the last partition.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        boundary: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_root: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub space: String,
    pub n_trials: usize,
    #[serde(default)]
    pub tier: Tier,
    #[serde(default = "random")]
    pub engine: Engine,
}

fn random() -> Engine {
    Engine::Random
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopCharging {
    #[serde(default = "yes")]
    pub embedding: bool,
    #[serde(default = "yes")]
    pub frozen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_updates: Option<usize>,
}

impl Default for FlopCharging {
    fn default() -> Self {
        Self { embedding: true, frozen: true, frozen_updates: None }
    }
}

fn meta_test() -> Phase {
    Phase::MetaTest
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "meta_test")]
    pub phase: Phase,
    pub output: PathBuf,
    pub stream: StreamSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
    pub strategy: Strategy,
    pub search: SearchConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub flops: FlopCharging,
    #[serde(default)]
    pub knn: KnnConfig,
}

impl RunConfig {
    /// Field-level checks, including the budget tiers.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        let (lo, hi) = TRIALS;
        if !(lo..=hi).contains(&self.search.n_trials) {
            return bad("search.n_trials", format!("{} outside [{lo}, {hi}]", self.search.n_trials));
        }
        let (lo, hi) = match self.search.tier {
            Tier::Standard => STANDARD_UPDATES,
            Tier::Cheap => CHEAP_UPDATES,
        };
        let updates = self.predictor.num_updates;
        if !(lo..=hi).contains(&updates) {
            return bad(
                "predictor.num_updates",
                format!("{updates} outside the {:?} tier [{lo}, {hi}]", self.search.tier).to_lowercase(),
            );
        }
        if let Some(f) = self.flops.frozen_updates {
            if !(lo..=hi).contains(&f) {
                return bad("flops.frozen_updates", format!("{f} outside [{lo}, {hi}]"));
            }
        }
        if let StreamSource::Synthetic(spec) = &self.stream {
            spec.validate().map_err(|e| Error::Config(format!("stream: {e}")))?;
        }
        if self.output.as_os_str().is_empty() {
            return bad("output", "empty path".into());
        }
        self.learner_config()?.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("strategy/predictor: {m}")),
            other => other,
        })
    }

    pub fn space(&self) -> Result<SearchSpace> {
        SearchSpace::by_name(&self.search.space).map_err(|e| Error::Config(format!("search.space: {e}")))
    }

    pub fn learner_config(&self) -> Result<LearnerConfig> {
        let mut c = LearnerConfig::new(
            self.strategy.clone(),
            self.predictor.clone(),
            self.space()?,
            self.search.n_trials,
            self.seed,
        );
        c.engine = self.search.engine;
        c.knn = self.knn;
        c.charge_embedding_flops = self.flops.embedding;
        c.charge_frozen_flops = self.flops.frozen;
        c.frozen_updates = self.flops.frozen_updates;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn parse_value(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Applies a `dotted.key=value` override; the value is read as TOML and
/// falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key segment")));
    }
    let mut table = doc;
    for seg in &path[..path.len() - 1] {
        let entry = table.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table =
            entry.as_table_mut().ok_or_else(|| Error::Config(format!("override `{key}`: `{seg}` is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
