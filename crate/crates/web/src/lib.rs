//! WebAssembly bindings for the static demo page in `www/`. Every function
//! takes and returns JSON text so the page needs no generated type glue.

use serde::{Deserialize, Serialize};
use streambench::analysis::{pareto_front, ParetoPoint};
use streambench::hpo::Gp;
use streambench::predictor::{compute_batch_size, LrSchedule, ScheduleKind};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(err)
}

#[derive(Serialize)]
struct Schedule {
    batch_size: usize,
    warmup: usize,
    steps: Vec<usize>,
    lr: Vec<f64>,
}

/// Batch size for a dataset and the per-update learning rate, sampled at
/// up to `points` evenly spaced updates.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn batch_schedule(
    dataset_size: usize,
    max_batch: usize,
    fraction: f64,
    num_updates: usize,
    peak: f64,
    floor: f64,
    warmup_fraction: f64,
    kind: &str,
    points: usize,
) -> Result<String, JsValue> {
    if num_updates == 0 || dataset_size == 0 {
        return Err(err("dataset size and updates must be positive"));
    }
    let kind = match kind {
        "cosine" => ScheduleKind::Cosine,
        "piecewise_constant" => ScheduleKind::PiecewiseConstant,
        other => return Err(err(format!("unknown schedule `{other}`"))),
    };
    let s = LrSchedule::new(kind, peak, floor, num_updates, warmup_fraction);
    let n = points.clamp(2, num_updates);
    let steps: Vec<usize> = (0..n).map(|i| i * (num_updates - 1) / (n - 1)).collect();
    let lr = steps.iter().map(|&t| s.for_update(t)).collect();
    to_json(&Schedule {
        batch_size: compute_batch_size(dataset_size, max_batch, fraction),
        warmup: s.warmup,
        steps,
        lr,
    })
}

/// Non-dominated subset of `[{label, error, flops}, ...]`.
#[wasm_bindgen]
pub fn pareto(points_json: &str) -> Result<String, JsValue> {
    let points: Vec<ParetoPoint> = serde_json::from_str(points_json).map_err(err)?;
    to_json(&pareto_front(&points))
}

#[derive(Deserialize)]
struct Observation {
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct Posterior {
    grid: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    bound: Vec<f64>,
    next: f64,
    length_scale: f64,
}

/// GP posterior over `[0, 1]` from `[{x, y}, ...]` and the point minimizing
/// `mean - beta * std`, the next query of a minimizing search.
#[wasm_bindgen]
pub fn gp_posterior(observations_json: &str, beta: f64, noise: f64, grid_size: usize) -> Result<String, JsValue> {
    let obs: Vec<Observation> = serde_json::from_str(observations_json).map_err(err)?;
    let x: Vec<Vec<f64>> = obs.iter().map(|o| vec![o.x.clamp(0.0, 1.0)]).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
    let gp = Gp::fit(&x, &y, noise.max(1e-8)).map_err(err)?;
    let n = grid_size.max(2);
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let (mean, std): (Vec<f64>, Vec<f64>) = grid.iter().map(|&g| gp.predict(&[g])).unzip();
    let bound: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - beta * s).collect();
    let best = bound.iter().enumerate().fold(0, |b, (i, v)| if *v < bound[b] { i } else { b });
    to_json(&Posterior { next: grid[best], length_scale: gp.length_scales()[0], grid, mean, std, bound })
}
