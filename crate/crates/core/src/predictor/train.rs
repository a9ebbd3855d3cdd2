use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::stream::{Example, Label, Task, TaskKind};

use super::config::PredictorConfig;
use super::flops::{compute_batch_size, FlopCounts, FlopModel};
use super::metrics::{sigmoid, softmax_rows};
use super::network::{backward, forward, update_running_stats, Grad, Head, LayerParams, NormStats};
use super::preprocess::{batch_matrix, input_shape, Mode};
use super::state::PredictorState;

/// Fixed mini-batch size of every auxiliary task in multitask training.
pub const AUX_BATCH: usize = 64;

/// The parts of a task a learner may train on.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub id: &'a str,
    pub kind: TaskKind,
    pub num_classes: usize,
    pub train: &'a [Example],
    pub val: &'a [Example],
}

impl<'a> TaskData<'a> {
    pub fn of(task: &'a Task) -> Self {
        Self { id: &task.id, kind: task.kind, num_classes: task.num_classes, train: task.train(), val: task.val() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// `1 - error` on the validation split.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_state: PredictorState,
    pub val_error: f64,
    pub flops: u64,
    pub learning_curve: Vec<CurvePoint>,
    pub wall_time: f64,
    pub batch_size: usize,
}

/// Steps at which the validation split is evaluated: every `eval_every`
/// updates starting at 0 and always at the end; only at the end when
/// `eval_every` is 0; never for an empty schedule.
pub fn eval_steps(num_updates: usize, eval_every: usize) -> Vec<usize> {
    if num_updates == 0 {
        return Vec::new();
    }
    let mut steps: Vec<usize> =
        if eval_every == 0 { Vec::new() } else { (0..num_updates).step_by(eval_every).collect() };
    steps.push(num_updates);
    steps
}

/// Analytic FLOPs of a training run with the given schedule.
pub fn training_flops(
    config: &PredictorConfig,
    data: &TaskData<'_>,
    aux: &[TaskData<'_>],
    input: super::network::Shape,
) -> Result<u64> {
    let steps = config.num_updates as u64;
    let batch = compute_batch_size(data.train.len(), config.max_batch, config.batch_fraction) as u64;
    let evals = eval_steps(config.num_updates, config.eval_every).len() as u64;
    let main = FlopModel::new(&config.arch, input, data.num_classes)?.estimate(&FlopCounts {
        train_steps: steps,
        batch,
        eval_examples: evals * data.val.len() as u64,
        feature_examples: 0,
    });
    let mut total = main;
    for a in aux {
        total += FlopModel::new(&config.arch, input, a.num_classes)?.estimate(&FlopCounts {
            train_steps: steps,
            batch: AUX_BATCH as u64,
            ..FlopCounts::default()
        });
    }
    Ok(total)
}

/// Trains one task from `init` (or a fresh backbone).
pub fn train(data: TaskData<'_>, config: &PredictorConfig, init: Option<&PredictorState>) -> Result<TrainReport> {
    train_multitask(data, &[], 0.0, config, init)
}

/// Trains on `data` while adding `lambda`-weighted losses of one
/// [`AUX_BATCH`]-sized batch per auxiliary task at every step. Auxiliary
/// batches do not update normalization running statistics.
pub fn train_multitask(
    data: TaskData<'_>,
    aux: &[TaskData<'_>],
    lambda: f64,
    config: &PredictorConfig,
    init: Option<&PredictorState>,
) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidTask(format!("task `{}`: train and val splits must be nonempty", data.id)));
    }
    let shape = input_shape(&data.train[0].input, config.input_resolution);
    let mut state = prepare_state(&data, aux, config, init, shape)?;

    let batch = compute_batch_size(data.train.len(), config.max_batch, config.batch_fraction);
    let schedule = super::schedule::LrSchedule::new(
        config.schedule,
        config.learning_rate,
        config.lr_floor,
        config.num_updates,
        config.warmup_fraction,
    );
    let mut sampler = Sampler::new(data.train.len(), derive_seed(config.seed, &["batches", data.id]));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["augment", data.id]));
    let mut aux_samplers: Vec<Sampler> =
        aux.iter().map(|a| Sampler::new(a.train.len(), derive_seed(config.seed, &["aux", a.id]))).collect();
    let mut optimizer = Nesterov::new(config.momentum, config.weight_decay);

    let evals = eval_steps(config.num_updates, config.eval_every);
    let mut next_eval = evals.iter().copied().peekable();
    let mut curve = Vec::with_capacity(evals.len());
    for step in 0..config.num_updates {
        if next_eval.peek() == Some(&step) {
            next_eval.next();
            curve.push(CurvePoint { step, accuracy: 1.0 - state.evaluate(data.id, data.kind, data.val)? });
        }
        let idx = sampler.next_batch(batch);
        let mut main = Batch::assemble(&data, &idx, shape, config, &mut aug_rng)?;
        let mut aux_batches = Vec::with_capacity(aux.len());
        for (a, s) in aux.iter().zip(&mut aux_samplers) {
            let idx = s.next_batch(AUX_BATCH);
            aux_batches.push(Batch::assemble(a, &idx, shape, config, &mut aug_rng)?);
        }
        let lr = schedule.for_update(step);
        let (loss, grads, stats) = gradients(&state, &mut main, &mut aux_batches, lambda, config.label_smoothing)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                learning_rate: config.learning_rate,
                label_smoothing: config.label_smoothing,
            });
        }
        update_running_stats(state.layers_mut(), &stats);
        optimizer.step(&mut state, &grads, lr);
    }
    let val_error = if config.num_updates > 0 {
        let e = state.evaluate(data.id, data.kind, data.val)?;
        curve.push(CurvePoint { step: config.num_updates, accuracy: 1.0 - e });
        e
    } else {
        state.evaluate(data.id, data.kind, data.val)?
    };
    let flops = training_flops(config, &data, aux, shape)?;
    Ok(TrainReport {
        final_state: state,
        val_error,
        flops,
        learning_curve: curve,
        wall_time: started.elapsed().as_secs_f64(),
        batch_size: batch,
    })
}

fn prepare_state(
    data: &TaskData<'_>,
    aux: &[TaskData<'_>],
    config: &PredictorConfig,
    init: Option<&PredictorState>,
    shape: super::network::Shape,
) -> Result<PredictorState> {
    let mut state = match init {
        Some(s) => {
            if s.arch() != &config.arch {
                return Err(Error::Shape(format!(
                    "init architecture `{}` differs from configured `{}`",
                    s.arch().name,
                    config.arch.name
                )));
            }
            if s.input_shape() != shape {
                return Err(Error::Shape(format!(
                    "init expects input {}, task `{}` gives {shape}",
                    s.input_shape(),
                    data.id
                )));
            }
            s.clone()
        }
        None => PredictorState::random(&config.arch, shape, derive_seed(config.seed, &["init"]))?,
    };
    // keep only heads trained in this run: the current task (always fresh)
    // and auxiliary tasks (inherited when present)
    let mut kept = BTreeMap::new();
    for a in aux {
        if a.id == data.id {
            return Err(Error::InvalidTask(format!("task `{}` listed as its own auxiliary task", a.id)));
        }
        let head = match state.heads().get(a.id) {
            Some(h) if h.num_classes() == a.num_classes => h.clone(),
            _ => fresh_head(&state, a, config.seed),
        };
        kept.insert(a.id.to_string(), head);
    }
    kept.insert(data.id.to_string(), fresh_head(&state, data, config.seed));
    *state.heads_mut() = kept;
    Ok(state)
}

fn fresh_head(state: &PredictorState, data: &TaskData<'_>, seed: u64) -> Head {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["head", data.id]));
    Head::init(state.feature_dim(), data.num_classes, &mut rng)
}

/// Epoch-wise shuffled index stream.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub(crate) struct Batch {
    pub head: String,
    pub kind: TaskKind,
    pub x: Option<Array2<f64>>,
    pub labels: Vec<Label>,
}

impl Batch {
    fn assemble(
        data: &TaskData<'_>,
        idx: &[usize],
        shape: super::network::Shape,
        config: &PredictorConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let examples: Vec<&Example> = idx.iter().map(|&i| &data.train[i]).collect();
        let x = batch_matrix(examples.iter().copied(), shape, Mode::Train, config.augmentation, rng)?;
        Ok(Self {
            head: data.id.to_string(),
            kind: data.kind,
            x: Some(x),
            labels: examples.iter().map(|e| e.label.clone()).collect(),
        })
    }
}

/// Gradients of every trainable array, in the same layout as the state.
pub(crate) struct Grads {
    pub layers: Vec<Grad>,
    pub heads: BTreeMap<String, (Array2<f64>, Array1<f64>)>,
}

/// Mean loss and gradient w.r.t. the logits.
pub(crate) fn loss_and_grad(
    logits: &Array2<f64>,
    labels: &[Label],
    kind: TaskKind,
    smoothing: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    let mut target = Array2::<f64>::zeros((n, c));
    for (i, l) in labels.iter().enumerate() {
        match (kind, l) {
            (TaskKind::SingleLabel, Label::Class(y)) if (*y as usize) < c => {
                target.row_mut(i).fill(smoothing / c as f64);
                target[[i, *y as usize]] += 1.0 - smoothing;
            }
            (TaskKind::MultiLabel, Label::Multi(v)) if v.len() == c => {
                for (j, &p) in v.iter().enumerate() {
                    target[[i, j]] = p as u8 as f64;
                }
            }
            _ => return Err(Error::InvalidTask(format!("label {l:?} does not fit a {kind} head with {c} classes"))),
        }
    }
    match kind {
        TaskKind::SingleLabel => {
            let probs = softmax_rows(logits);
            let mut loss = 0.0;
            for (zr, qr) in logits.axis_iter(Axis(0)).zip(target.axis_iter(Axis(0))) {
                let m = zr.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + zr.mapv(|v| (v - m).exp()).sum().ln();
                loss -= zr.iter().zip(qr).map(|(z, q)| q * (z - lse)).sum::<f64>();
            }
            Ok((loss / n as f64, (probs - target) / n as f64))
        }
        TaskKind::MultiLabel => {
            // mean over examples and classes of the logistic loss
            let denom = (n * c) as f64;
            let mut loss = 0.0;
            let mut grad = Array2::zeros((n, c));
            ndarray::Zip::from(&mut grad).and(logits).and(&target).for_each(|g, &z, &y| {
                loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                *g = (sigmoid(z) - y) / denom;
            });
            Ok((loss / denom, grad))
        }
    }
}

/// Total loss and gradients of one update: the main batch plus
/// `lambda`-weighted auxiliary batches. Returns normalization statistics of
/// the main batch only.
pub(crate) fn gradients(
    state: &PredictorState,
    main: &mut Batch,
    aux: &mut [Batch],
    lambda: f64,
    smoothing: f64,
) -> Result<(f64, Grads, Vec<NormStats>)> {
    let (arch, shapes, layers) = (state.arch(), state.shapes(), state.layers());
    let mut total = 0.0;
    let mut acc: Option<Vec<Grad>> = None;
    let mut heads = BTreeMap::new();
    let mut main_stats = Vec::new();
    for (i, b) in std::iter::once(main).chain(aux.iter_mut()).enumerate() {
        let weight = if i == 0 { 1.0 } else { lambda };
        let fwd = forward(arch, shapes, layers, b.x.take().expect("batch used once"), true);
        let head = state.head(&b.head)?;
        let logits = head.logits(&fwd.out);
        let (loss, mut dlogits) = loss_and_grad(&logits, &b.labels, b.kind, smoothing)?;
        total += weight * loss;
        dlogits *= weight;
        let dw = fwd.out.t().dot(&dlogits);
        let db = dlogits.sum_axis(Axis(0));
        let dfeat = dlogits.dot(&head.w.t());
        heads.insert(b.head.clone(), (dw, db));
        let g = backward(arch, shapes, layers, fwd.caches, dfeat);
        acc = Some(match acc {
            None => g,
            Some(prev) => prev.into_iter().zip(g).map(|(a, b)| add_grad(a, b)).collect(),
        });
        if i == 0 {
            main_stats = fwd.stats;
        }
    }
    Ok((total, Grads { layers: acc.unwrap_or_default(), heads }, main_stats))
}

/// Mean loss of one preprocessed batch on `task`'s head and its gradient,
/// laid out as [`PredictorState::parameters`]. Normalization layers use
/// batch statistics, as in training.
pub fn batch_gradient(
    state: &PredictorState,
    task: &str,
    kind: TaskKind,
    x: Array2<f64>,
    labels: &[Label],
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    if x.nrows() != labels.len() || x.ncols() != state.input_shape().size() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "batch of {}x{} with {} labels for inputs of size {}",
            x.nrows(),
            x.ncols(),
            labels.len(),
            state.input_shape().size()
        )));
    }
    let mut b = Batch { head: task.into(), kind, x: Some(x), labels: labels.to_vec() };
    let (loss, g, _) = gradients(state, &mut b, &mut [], 0.0, smoothing)?;
    let mut v = Vec::with_capacity(state.num_parameters());
    for l in &g.layers {
        match l {
            Grad::Affine { w, b } => {
                v.extend(w.iter());
                v.extend(b.iter());
            }
            Grad::Norm { gamma, beta } => {
                v.extend(gamma.iter());
                v.extend(beta.iter());
            }
            Grad::None => {}
        }
    }
    for (id, h) in state.heads() {
        match g.heads.get(id) {
            Some((w, b)) => {
                v.extend(w.iter());
                v.extend(b.iter());
            }
            None => v.extend(std::iter::repeat_n(0.0, h.w.len() + h.b.len())),
        }
    }
    Ok((loss, v))
}

fn add_grad(a: Grad, b: Grad) -> Grad {
    match (a, b) {
        (Grad::Affine { w, b }, Grad::Affine { w: w2, b: b2 }) => Grad::Affine { w: w + w2, b: b + b2 },
        (Grad::Norm { gamma, beta }, Grad::Norm { gamma: g2, beta: b2 }) => {
            Grad::Norm { gamma: gamma + g2, beta: beta + b2 }
        }
        (a, _) => a,
    }
}

/// SGD with Nesterov momentum; weight decay applies to weight matrices only.
struct Nesterov {
    momentum: f64,
    weight_decay: f64,
    buffers: Vec<Vec<f64>>,
}

impl Nesterov {
    fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: Vec::new() }
    }

    fn step(&mut self, state: &mut PredictorState, grads: &Grads, lr: f64) {
        let mut slot = 0;
        let (mu, wd) = (self.momentum, self.weight_decay);
        let buffers = &mut self.buffers;
        let mut apply = |p: &mut [f64], g: &[f64], decay: bool| {
            if buffers.len() == slot {
                buffers.push(vec![0.0; p.len()]);
            }
            let v = &mut buffers[slot];
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                let d = if decay { gi + wd * *pi } else { gi };
                *vi = mu * *vi + d;
                *pi -= lr * (d + mu * *vi);
            }
            slot += 1;
        };
        for (p, g) in state.layers_mut().iter_mut().zip(&grads.layers) {
            match (p, g) {
                (LayerParams::Affine { w, b }, Grad::Affine { w: gw, b: gb }) => {
                    apply(w.as_slice_mut().unwrap(), gw.as_standard_layout().as_slice().unwrap(), true);
                    apply(b.as_slice_mut().unwrap(), gb.as_slice().unwrap(), false);
                }
                (LayerParams::Norm { gamma, beta, .. }, Grad::Norm { gamma: gg, beta: gb }) => {
                    apply(gamma.as_slice_mut().unwrap(), gg.as_slice().unwrap(), false);
                    apply(beta.as_slice_mut().unwrap(), gb.as_slice().unwrap(), false);
                }
                _ => {}
            }
        }
        for (id, head) in state.heads_mut().iter_mut() {
            if let Some((gw, gb)) = grads.heads.get(id) {
                apply(head.w.as_slice_mut().unwrap(), gw.as_standard_layout().as_slice().unwrap(), true);
                apply(head.b.as_slice_mut().unwrap(), gb.as_slice().unwrap(), false);
            }
        }
    }
}
