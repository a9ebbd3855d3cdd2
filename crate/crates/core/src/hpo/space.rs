use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{ArchSpec, PredictorConfig, ScheduleKind};

/// One hyper-parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

pub type Hparams = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimKind {
    Continuous {
        scale: Scale,
        lo: f64,
        hi: f64,
    },
    /// Sampled uniformly at random.
    Categorical {
        values: Vec<Value>,
    },
    /// Enumerated in order by random search (cartesian product over all grid
    /// dimensions, cycling when trials outnumber grid points).
    Grid {
        values: Vec<Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
}

impl Dimension {
    pub fn log(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: DimKind::Continuous { scale: Scale::Log, lo, hi } }
    }

    pub fn linear(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: DimKind::Continuous { scale: Scale::Linear, lo, hi } }
    }

    pub fn categorical(name: &str, values: Vec<Value>) -> Self {
        Self { name: name.into(), kind: DimKind::Categorical { values } }
    }

    pub fn grid(name: &str, values: Vec<Value>) -> Self {
        Self { name: name.into(), kind: DimKind::Grid { values } }
    }

    /// Width of this dimension in the GP's unit-cube encoding.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            DimKind::Continuous { .. } => 1,
            DimKind::Categorical { values } | DimKind::Grid { values } => values.len(),
        }
    }

    /// Maps `u` in [0, 1) to a value of this dimension.
    pub fn from_unit(&self, u: f64) -> Value {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            DimKind::Continuous { scale: Scale::Linear, lo, hi } => Value::Real(lo + u * (hi - lo)),
            DimKind::Continuous { scale: Scale::Log, lo, hi } => Value::Real((lo.ln() + u * (hi.ln() - lo.ln())).exp()),
            DimKind::Categorical { values } | DimKind::Grid { values } => {
                values[((u * values.len() as f64) as usize).min(values.len() - 1)].clone()
            }
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (&self.kind, v) {
            (DimKind::Continuous { lo, hi, .. }, Value::Real(x)) => *x >= *lo && *x <= *hi,
            (DimKind::Categorical { values } | DimKind::Grid { values }, v) => values.contains(v),
            _ => false,
        }
    }
}

pub const LEARNING_RATE: &str = "learning_rate";
pub const LABEL_SMOOTHING: &str = "label_smoothing";
pub const SCHEDULE: &str = "schedule";
pub const MAX_BATCH: &str = "max_batch";
pub const ARCH: &str = "arch";
pub const RANDOM_CROP: &str = "random_resized_crop";
pub const FLIP: &str = "horizontal_flip";
pub const MT_LAMBDA: &str = "mt_lambda";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let s = Self { dimensions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if self.dimensions.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        for d in &self.dimensions {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Config(format!("duplicate search dimension `{}`", d.name)));
            }
            match &d.kind {
                DimKind::Continuous { scale, lo, hi } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::Config(format!("dimension `{}`: need lo < hi", d.name)));
                    }
                    if *scale == Scale::Log && *lo <= 0.0 {
                        return Err(Error::Config(format!("dimension `{}`: log scale needs lo > 0", d.name)));
                    }
                }
                DimKind::Categorical { values } | DimKind::Grid { values } => {
                    if values.is_empty() {
                        return Err(Error::Config(format!("dimension `{}`: no values", d.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Learning rate (log-uniform) and label smoothing.
    pub fn small() -> Self {
        Self {
            dimensions: vec![Dimension::log(LEARNING_RATE, 1e-4, 1e-1), Dimension::linear(LABEL_SMOOTHING, 0.0, 0.3)],
        }
    }

    /// Four learning rates with label smoothing fixed at 0.15.
    pub fn cheap() -> Self {
        Self {
            dimensions: vec![
                Dimension::grid(LEARNING_RATE, [1e-4, 1e-3, 1e-2, 1e-1].map(Value::Real).to_vec()),
                Dimension::grid(LABEL_SMOOTHING, vec![Value::Real(0.15)]),
            ],
        }
    }

    /// Seven dimensions: learning rate, label smoothing, schedule, batch
    /// size, architecture and the two augmentation toggles.
    pub fn large() -> Self {
        let text = |v: &[&str]| v.iter().map(|s| Value::Text(s.to_string())).collect();
        let bools = vec![Value::Bool(false), Value::Bool(true)];
        Self {
            dimensions: vec![
                Dimension::log(LEARNING_RATE, 1e-4, 1e-1),
                Dimension::linear(LABEL_SMOOTHING, 0.0, 0.3),
                Dimension::categorical(SCHEDULE, text(&["cosine", "piecewise_constant"])),
                Dimension::categorical(MAX_BATCH, [64.0, 128.0, 256.0, 512.0].map(Value::Real).to_vec()),
                Dimension::categorical(ARCH, text(&["small_conv", "mlp"])),
                Dimension::categorical(RANDOM_CROP, bools.clone()),
                Dimension::categorical(FLIP, bools),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "cheap" => Ok(Self::cheap()),
            "large" => Ok(Self::large()),
            _ => Err(Error::Config(format!("unknown search space `{name}` (expected small, cheap or large)"))),
        }
    }

    /// Adds the multitask loss weight, log-uniform over [0.01, 1].
    pub fn with_mt_lambda(mut self) -> Self {
        if !self.dimensions.iter().any(|d| d.name == MT_LAMBDA) {
            self.dimensions.push(Dimension::log(MT_LAMBDA, 0.01, 1.0));
        }
        self
    }

    pub fn encoded_width(&self) -> usize {
        self.dimensions.iter().map(Dimension::encoded_width).sum()
    }

    pub fn from_unit(&self, u: &[f64]) -> Hparams {
        self.dimensions.iter().zip(u).map(|(d, &x)| (d.name.clone(), d.from_unit(x))).collect()
    }

    pub fn contains(&self, h: &Hparams) -> bool {
        h.len() == self.dimensions.len()
            && self.dimensions.iter().all(|d| h.get(&d.name).is_some_and(|v| d.contains(v)))
    }

    /// Unit-cube encoding for the surrogate: continuous values rescaled
    /// (in log space for log dimensions), discrete values one-hot.
    pub fn encode(&self, h: &Hparams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for d in &self.dimensions {
            let v = &h[&d.name];
            match &d.kind {
                DimKind::Continuous { scale, lo, hi } => {
                    let x = v.as_f64().unwrap_or(*lo);
                    out.push(match scale {
                        Scale::Linear => (x - lo) / (hi - lo),
                        Scale::Log => (x.ln() - lo.ln()) / (hi.ln() - lo.ln()),
                    });
                }
                DimKind::Categorical { values } | DimKind::Grid { values } => {
                    out.extend(values.iter().map(|c| (c == v) as u8 as f64));
                }
            }
        }
        out
    }

    /// Independent draw per dimension; grid dimensions take the `index`-th
    /// point of their cartesian product.
    pub fn sample(&self, index: usize, rng: &mut impl Rng) -> Hparams {
        let mut grid_rank = index;
        let mut h = Hparams::new();
        for d in &self.dimensions {
            let v = match &d.kind {
                DimKind::Grid { values } => {
                    let v = values[grid_rank % values.len()].clone();
                    grid_rank /= values.len();
                    v
                }
                _ => d.from_unit(rng.random::<f64>()),
            };
            h.insert(d.name.clone(), v);
        }
        h
    }
}

fn real(h: &Hparams, name: &str) -> Result<Option<f64>> {
    match h.get(name) {
        None => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| Error::Config(format!("`{name}` must be a number, got {v}"))),
    }
}

fn flag(h: &Hparams, name: &str) -> Result<Option<bool>> {
    match h.get(name) {
        None => Ok(None),
        Some(v) => v.as_bool().map(Some).ok_or_else(|| Error::Config(format!("`{name}` must be a boolean, got {v}"))),
    }
}

/// Architecture presets selectable by the `arch` dimension.
pub fn arch_preset(name: &str) -> Result<ArchSpec> {
    match name {
        "mlp" => Ok(ArchSpec::mlp(&[64, 64])),
        "small_conv" => Ok(ArchSpec::small_conv(8)),
        _ => Err(Error::Config(format!("unknown architecture preset `{name}`"))),
    }
}

/// Config with the searched hyper-parameters applied. Names the predictor
/// does not know (such as `mt_lambda`) are ignored here.
pub fn apply_hparams(base: &PredictorConfig, h: &Hparams) -> Result<PredictorConfig> {
    let mut c = base.clone();
    if let Some(v) = real(h, LEARNING_RATE)? {
        c.learning_rate = v;
        c.lr_floor = c.lr_floor.min(v);
    }
    if let Some(v) = real(h, LABEL_SMOOTHING)? {
        c.label_smoothing = v;
    }
    if let Some(v) = real(h, MAX_BATCH)? {
        c.max_batch = v as usize;
    }
    if let Some(v) = h.get(SCHEDULE) {
        c.schedule = match v.as_str() {
            Some("cosine") => ScheduleKind::Cosine,
            Some("piecewise_constant") => ScheduleKind::PiecewiseConstant,
            _ => return Err(Error::Config(format!("unknown schedule `{v}`"))),
        };
    }
    if let Some(v) = h.get(ARCH) {
        c.arch = arch_preset(v.as_str().ok_or_else(|| Error::Config(format!("`arch` must be text, got {v}")))?)?;
    }
    if let Some(v) = flag(h, RANDOM_CROP)? {
        c.augmentation.random_resized_crop = v;
    }
    if let Some(v) = flag(h, FLIP)? {
        c.augmentation.horizontal_flip = v;
    }
    c.validate()?;
    Ok(c)
}
