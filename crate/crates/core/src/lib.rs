//! Compute-aware evaluation harness for never-ending sequential learning.
//!
//! A [`stream::Stream`] is an ordered sequence of classification tasks split
//! into a meta-train prefix and a meta-test suffix. A meta-learner walks the
//! stream once through a causality guard ([`protocol::CausalView`]), trains a
//! predictor per task with hyper-parameter search ([`hpo`]), and every
//! training FLOP is accounted analytically ([`predictor::FlopModel`]). The
//! [`analysis`] module turns per-task records into stream metrics, Pareto
//! fronts, regret curves, forward transfer and transfer matrices.

pub mod analysis;
pub mod codec;
pub mod error;
pub mod hpo;
pub mod metalearner;
pub mod predictor;
pub mod protocol;
pub mod registry;
pub mod seed;
pub mod stream;

pub use error::{Error, Result};
