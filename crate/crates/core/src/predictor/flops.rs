use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::config::{ArchSpec, LayerSpec};
use super::network::{infer_shapes, Shape};

/// Batch size from the dataset size: `min(B, max(16, 2^floor(log2(p * D))))`.
pub fn compute_batch_size(dataset_size: usize, max_batch: usize, fraction: f64) -> usize {
    let scaled = fraction * dataset_size as f64;
    let pow = if scaled >= 1.0 {
        // exact floor(log2) without float rounding at powers of two
        let whole = scaled.floor() as u64;
        1usize << (63 - whole.leading_zeros())
    } else {
        1
    };
    pow.max(16).min(max_batch)
}

/// Per-example forward cost of a network, split into backbone and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopModel {
    pub backbone_forward: u64,
    pub head_forward: u64,
}

/// Operation counts of one training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub train_steps: u64,
    pub batch: u64,
    /// Examples run through backbone and head.
    pub eval_examples: u64,
    /// Examples run through the backbone only.
    pub feature_examples: u64,
}

pub fn layer_forward_flops(layer: &LayerSpec, input: Shape, output: Shape) -> u64 {
    let out = output.size() as u64;
    match layer {
        LayerSpec::Dense { units } => 2 * input.size() as u64 * *units as u64 + *units as u64,
        LayerSpec::Conv { channels, kernel, .. } => {
            let fan_in = (input.c * kernel * kernel) as u64;
            2 * fan_in * *channels as u64 * (output.h * output.w) as u64 + out
        }
        LayerSpec::Relu => out,
        LayerSpec::BatchNorm => 2 * out,
        LayerSpec::GlobalAvgPool => input.size() as u64,
        LayerSpec::Flatten => 0,
    }
}

impl FlopModel {
    pub fn new(arch: &ArchSpec, input: Shape, num_classes: usize) -> Result<Self> {
        let shapes = infer_shapes(arch, input)?;
        let backbone_forward =
            arch.layers.iter().enumerate().map(|(i, l)| layer_forward_flops(l, shapes[i], shapes[i + 1])).sum();
        let features = shapes.last().map_or(0, |s| s.size()) as u64;
        let head_forward = 2 * features * num_classes as u64 + num_classes as u64;
        Ok(Self { backbone_forward, head_forward })
    }

    pub fn forward(&self) -> u64 {
        self.backbone_forward + self.head_forward
    }

    /// Training costs three forward passes per example (forward plus a
    /// backward pass at twice the forward cost); evaluation and feature
    /// extraction cost one.
    pub fn estimate(&self, counts: &FlopCounts) -> u64 {
        3 * self.forward() * counts.train_steps * counts.batch
            + self.forward() * counts.eval_examples
            + self.backbone_forward * counts.feature_examples
    }
}

pub fn flop_estimate(arch: &ArchSpec, input: Shape, num_classes: usize, counts: &FlopCounts) -> Result<u64> {
    Ok(FlopModel::new(arch, input, num_classes)?.estimate(counts))
}
