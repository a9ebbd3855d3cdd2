use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    /// Square kernel, "same" padding (`kernel / 2`).
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Per-channel batch normalization with running statistics.
    BatchNorm,
    GlobalAvgPool,
    Flatten,
}

/// Backbone architecture. Task heads (one dense layer per task) are added on
/// top of the last backbone layer, whose width is the feature dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    pub fn mlp(hidden: &[usize]) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Relu);
        }
        let name = format!("mlp-{}", hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x"));
        Self { name, layers }
    }

    /// Small conv net: three 3x3 conv stages with batch norm, channel widths
    /// `c, 2c, 4c`, the last two with stride 2, then global average pooling.
    pub fn small_conv(c: usize) -> Self {
        let mut layers = Vec::new();
        for (i, ch) in [c, 2 * c, 4 * c].into_iter().enumerate() {
            layers.push(LayerSpec::Conv { channels: ch, kernel: 3, stride: if i == 0 { 1 } else { 2 } });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::GlobalAvgPool);
        Self { name: format!("small-conv-ch{c}"), layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear warmup, then cosine decay to the floor.
    #[default]
    Cosine,
    /// Linear warmup, then constant with 10x drops at 50% and 75% of training.
    PiecewiseConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub random_resized_crop: bool,
    pub horizontal_flip: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { random_resized_crop: true, horizontal_flip: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub arch: ArchSpec,
    /// Square side length images are cropped and resized to.
    pub input_resolution: usize,
    /// Maximum batch size `B` of the batch-size heuristic.
    pub max_batch: usize,
    /// Fraction `p` of the dataset size used by the batch-size heuristic.
    pub batch_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub num_updates: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub schedule: ScheduleKind,
    pub label_smoothing: f64,
    pub augmentation: Augmentation,
    /// Learning-curve evaluation interval in updates (0 = only at the end).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::mlp(&[64, 64]),
            input_resolution: 64,
            max_batch: 512,
            batch_fraction: 0.0025,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_fraction: 0.05,
            num_updates: 1000,
            learning_rate: 0.01,
            lr_floor: 0.0,
            schedule: ScheduleKind::Cosine,
            label_smoothing: 0.0,
            augmentation: Augmentation::default(),
            eval_every: 0,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor <= self.learning_rate) {
            return bad("lr_floor must lie in [0, learning_rate]");
        }
        if !(self.label_smoothing >= 0.0 && self.label_smoothing < 1.0) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if self.max_batch < 16 {
            return bad("max_batch must be at least 16");
        }
        if !(self.batch_fraction > 0.0) {
            return bad("batch_fraction must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.input_resolution == 0 {
            return bad("input_resolution must be positive");
        }
        Ok(())
    }
}
