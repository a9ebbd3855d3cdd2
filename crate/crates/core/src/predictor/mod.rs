//! Task-level learner: small configurable networks, training with SGD and
//! warmup schedules, evaluation metrics, feature extraction and an analytic
//! FLOP model.

mod config;
mod flops;
pub mod metrics;
mod network;
mod preprocess;
mod schedule;
mod state;
mod train;

pub use config::{ArchSpec, Augmentation, LayerSpec, PredictorConfig, ScheduleKind};
pub use flops::{compute_batch_size, flop_estimate, layer_forward_flops, FlopCounts, FlopModel};
pub use network::{infer_shapes, Head, LayerParams, Shape};
pub use preprocess::{input_shape, preprocess, Mode, IMAGE_CHANNELS};
pub use schedule::LrSchedule;
pub use state::PredictorState;
pub use train::{
    batch_gradient, eval_steps, train, train_multitask, training_flops, CurvePoint, TaskData, TrainReport, AUX_BATCH,
};
