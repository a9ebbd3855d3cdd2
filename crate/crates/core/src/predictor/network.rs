//! Backbone forward and backward passes. Activations are `N x size` row-major
//! matrices with each row in channel-major (CHW) order.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{ArchSpec, LayerSpec};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn flat(d: usize) -> Self {
        Self { c: d, h: 1, w: 1 }
    }

    pub fn size(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Shapes before the first layer and after every layer.
pub fn infer_shapes(arch: &ArchSpec, input: Shape) -> Result<Vec<Shape>> {
    if input.size() == 0 {
        return Err(Error::Shape(format!("empty input shape {input}")));
    }
    let mut shapes = vec![input];
    for (i, layer) in arch.layers.iter().enumerate() {
        let s = shapes[i];
        let next = match *layer {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Shape(format!("layer {i}: dense layer with zero units")));
                }
                Shape::flat(units)
            }
            LayerSpec::Conv { channels, kernel, stride } => {
                if channels == 0 || stride == 0 || kernel % 2 == 0 {
                    return Err(Error::Shape(format!(
                        "layer {i}: conv needs channels > 0, stride > 0 and an odd kernel"
                    )));
                }
                let pad = kernel / 2;
                Shape {
                    c: channels,
                    h: (s.h + 2 * pad - kernel) / stride + 1,
                    w: (s.w + 2 * pad - kernel) / stride + 1,
                }
            }
            LayerSpec::Relu | LayerSpec::BatchNorm => s,
            LayerSpec::GlobalAvgPool => Shape::flat(s.c),
            LayerSpec::Flatten => Shape::flat(s.size()),
        };
        shapes.push(next);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Stateless,
    /// Dense or conv weights, `fan_in x out`.
    Affine {
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Norm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `features x classes`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Head {
    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub(crate) fn init(features: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / features as f64).sqrt();
        Self { w: normal_matrix(features, classes, std, rng), b: Array1::zeros(classes) }
    }

    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        features.dot(&self.w) + &self.b
    }
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn fan_in(layer: &LayerSpec, input: Shape) -> usize {
    match layer {
        LayerSpec::Conv { kernel, .. } => input.c * kernel * kernel,
        _ => input.size(),
    }
}

/// He-normal weights, zero biases, identity normalization.
pub(crate) fn init_layers(arch: &ArchSpec, shapes: &[Shape], rng: &mut impl Rng) -> Vec<LayerParams> {
    arch.layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } => {
                let fi = fan_in(layer, shapes[i]);
                let out = shapes[i + 1].c;
                LayerParams::Affine { w: normal_matrix(fi, out, (2.0 / fi as f64).sqrt(), rng), b: Array1::zeros(out) }
            }
            LayerSpec::BatchNorm => {
                let c = shapes[i].c;
                LayerParams::Norm {
                    gamma: Array1::ones(c),
                    beta: Array1::zeros(c),
                    running_mean: Array1::zeros(c),
                    running_var: Array1::ones(c),
                }
            }
            _ => LayerParams::Stateless,
        })
        .collect()
}

/// Checks that parameter arrays match what the architecture implies.
pub(crate) fn check_layers(arch: &ArchSpec, shapes: &[Shape], layers: &[LayerParams]) -> Result<()> {
    if layers.len() != arch.layers.len() {
        return Err(Error::Shape(format!("{} parameter groups for {} layers", layers.len(), arch.layers.len())));
    }
    for (i, (spec, p)) in arch.layers.iter().zip(layers).enumerate() {
        let ok = match (spec, p) {
            (LayerSpec::Dense { .. } | LayerSpec::Conv { .. }, LayerParams::Affine { w, b }) => {
                w.dim() == (fan_in(spec, shapes[i]), shapes[i + 1].c) && b.len() == shapes[i + 1].c
            }
            (LayerSpec::BatchNorm, LayerParams::Norm { gamma, beta, running_mean, running_var }) => {
                let c = shapes[i].c;
                gamma.len() == c && beta.len() == c && running_mean.len() == c && running_var.len() == c
            }
            (LayerSpec::Relu | LayerSpec::GlobalAvgPool | LayerSpec::Flatten, LayerParams::Stateless) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!("layer {i} ({spec:?}): parameters do not match the architecture")));
        }
    }
    Ok(())
}

pub(crate) enum Cache {
    None,
    Dense { x: Array2<f64> },
    Conv { cols: Array2<f64> },
    Relu { y: Array2<f64> },
    Norm { xhat: Array2<f64>, inv_std: Array1<f64> },
}

/// Batch statistics observed by a normalization layer in training mode
/// (mean and unbiased variance per channel).
pub(crate) struct NormStats {
    pub layer: usize,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

pub(crate) struct ForwardPass {
    pub out: Array2<f64>,
    pub caches: Vec<Cache>,
    pub stats: Vec<NormStats>,
}

#[derive(Debug, Clone)]
pub(crate) enum Grad {
    None,
    Affine { w: Array2<f64>, b: Array1<f64> },
    Norm { gamma: Array1<f64>, beta: Array1<f64> },
}

/// Forward pass. In training mode normalization layers use batch statistics
/// and caches are kept for [`backward`]; in eval mode they use running
/// statistics.
pub(crate) fn forward(
    arch: &ArchSpec,
    shapes: &[Shape],
    layers: &[LayerParams],
    x: Array2<f64>,
    train: bool,
) -> ForwardPass {
    let mut h = x.as_standard_layout().into_owned();
    let mut caches = Vec::with_capacity(layers.len());
    let mut stats = Vec::new();
    for (i, (spec, p)) in arch.layers.iter().zip(layers).enumerate() {
        let (sin, sout) = (shapes[i], shapes[i + 1]);
        let (next, cache) = match (spec, p) {
            (LayerSpec::Dense { .. }, LayerParams::Affine { w, b }) => {
                let y = h.dot(w) + b;
                (y, if train { Cache::Dense { x: h } } else { Cache::None })
            }
            (LayerSpec::Conv { kernel, stride, .. }, LayerParams::Affine { w, b }) => {
                let cols = im2col(&h, sin, sout, *kernel, *stride);
                let y = cols.dot(w) + b;
                let out = pixels_to_rows(&y, h.nrows(), sout);
                (out, if train { Cache::Conv { cols } } else { Cache::None })
            }
            (LayerSpec::Relu, _) => {
                let y = h.mapv(|v| v.max(0.0));
                (y.clone(), if train { Cache::Relu { y } } else { Cache::None })
            }
            (LayerSpec::BatchNorm, LayerParams::Norm { gamma, beta, running_mean, running_var }) => {
                if train {
                    let (y, xhat, inv_std, mean, var) = norm_train(&h, sin, gamma, beta);
                    stats.push(NormStats { layer: i, mean, var });
                    (y, Cache::Norm { xhat, inv_std })
                } else {
                    (norm_eval(&h, sin, gamma, beta, running_mean, running_var), Cache::None)
                }
            }
            (LayerSpec::GlobalAvgPool, _) => (global_pool(&h, sin), Cache::None),
            (LayerSpec::Flatten, _) => (h, Cache::None),
            _ => unreachable!("parameters checked against the architecture"),
        };
        h = next;
        caches.push(cache);
    }
    ForwardPass { out: h, caches, stats }
}

/// Backward pass from the gradient w.r.t. the backbone output. Returns one
/// gradient per layer; the input gradient is not computed.
pub(crate) fn backward(
    arch: &ArchSpec,
    shapes: &[Shape],
    layers: &[LayerParams],
    caches: Vec<Cache>,
    dout: Array2<f64>,
) -> Vec<Grad> {
    let mut grads = vec![Grad::None; layers.len()];
    let mut d = dout;
    for (i, cache) in caches.into_iter().enumerate().rev() {
        let (sin, sout) = (shapes[i], shapes[i + 1]);
        let need_dx = i > 0;
        let spec = &arch.layers[i];
        d = match (spec, &layers[i], cache) {
            (LayerSpec::Dense { .. }, LayerParams::Affine { w, .. }, Cache::Dense { x }) => {
                grads[i] = Grad::Affine { w: x.t().dot(&d), b: d.sum_axis(Axis(0)) };
                if need_dx {
                    d.dot(&w.t())
                } else {
                    d
                }
            }
            (LayerSpec::Conv { kernel, stride, .. }, LayerParams::Affine { w, .. }, Cache::Conv { cols }) => {
                let n = d.nrows();
                let dy = rows_to_pixels(&d, n, sout);
                grads[i] = Grad::Affine { w: cols.t().dot(&dy), b: dy.sum_axis(Axis(0)) };
                if need_dx {
                    col2im(&dy.dot(&w.t()), n, sin, sout, *kernel, *stride)
                } else {
                    d
                }
            }
            (LayerSpec::Relu, _, Cache::Relu { y }) => {
                d.zip_mut_with(&y, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                d
            }
            (LayerSpec::BatchNorm, LayerParams::Norm { gamma, .. }, Cache::Norm { xhat, inv_std }) => {
                let (dx, dgamma, dbeta) = norm_backward(&d, &xhat, &inv_std, gamma, sin);
                grads[i] = Grad::Norm { gamma: dgamma, beta: dbeta };
                dx
            }
            (LayerSpec::GlobalAvgPool, _, _) => {
                let s = sin.spatial();
                let mut dx = Array2::zeros((d.nrows(), sin.size()));
                for (mut row, drow) in dx.axis_iter_mut(Axis(0)).zip(d.axis_iter(Axis(0))) {
                    for c in 0..sin.c {
                        let g = drow[c] / s as f64;
                        row.slice_mut(ndarray::s![c * s..(c + 1) * s]).fill(g);
                    }
                }
                dx
            }
            (LayerSpec::Flatten, _, _) => d,
            _ => unreachable!("forward ran in training mode"),
        };
    }
    grads
}

/// Folds batch statistics into the running estimates.
pub(crate) fn update_running_stats(layers: &mut [LayerParams], stats: &[NormStats]) {
    for st in stats {
        if let LayerParams::Norm { running_mean, running_var, .. } = &mut layers[st.layer] {
            running_mean.zip_mut_with(&st.mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            running_var.zip_mut_with(&st.var, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v);
        }
    }
}

fn norm_train(
    x: &Array2<f64>,
    s: Shape,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let (n, sp) = (x.nrows(), s.spatial());
    let m = (n * sp) as f64;
    let xs = x.as_slice().expect("standard layout");
    let size = s.size();
    let mut mean = Array1::zeros(s.c);
    let mut var = Array1::zeros(s.c);
    let mut inv_std = Array1::zeros(s.c);
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut y = Array2::zeros(x.raw_dim());
    {
        let xh = xhat.as_slice_mut().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for c in 0..s.c {
            let mut sum = 0.0;
            for b in 0..n {
                sum += xs[b * size + c * sp..b * size + (c + 1) * sp].iter().sum::<f64>();
            }
            let mu = sum / m;
            let mut sq = 0.0;
            for b in 0..n {
                sq += xs[b * size + c * sp..b * size + (c + 1) * sp].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            let v = sq / m;
            let is = 1.0 / (v + BN_EPS).sqrt();
            for b in 0..n {
                for j in b * size + c * sp..b * size + (c + 1) * sp {
                    xh[j] = (xs[j] - mu) * is;
                    ys[j] = gamma[c] * xh[j] + beta[c];
                }
            }
            mean[c] = mu;
            var[c] = if m > 1.0 { sq / (m - 1.0) } else { v };
            inv_std[c] = is;
        }
    }
    (y, xhat, inv_std, mean, var)
}

fn norm_eval(
    x: &Array2<f64>,
    s: Shape,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    mean: &Array1<f64>,
    var: &Array1<f64>,
) -> Array2<f64> {
    let sp = s.spatial();
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        for c in 0..s.c {
            let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
            let shift = beta[c] - mean[c] * scale;
            row.slice_mut(ndarray::s![c * sp..(c + 1) * sp]).mapv_inplace(|v| v * scale + shift);
        }
    }
    y
}

fn norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    gamma: &Array1<f64>,
    s: Shape,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (n, sp, size) = (dy.nrows(), s.spatial(), s.size());
    let m = (n * sp) as f64;
    let dys = dy.as_standard_layout();
    let dys = dys.as_slice().unwrap();
    let xh = xhat.as_slice().unwrap();
    let mut dx = Array2::zeros(dy.raw_dim());
    let mut dgamma = Array1::zeros(s.c);
    let mut dbeta = Array1::zeros(s.c);
    let dxs = dx.as_slice_mut().unwrap();
    for c in 0..s.c {
        let (mut sg, mut sb) = (0.0, 0.0);
        for b in 0..n {
            for j in b * size + c * sp..b * size + (c + 1) * sp {
                sg += dys[j] * xh[j];
                sb += dys[j];
            }
        }
        dgamma[c] = sg;
        dbeta[c] = sb;
        // d xhat = dy * gamma, so its sums are gamma * (sb, sg)
        let k = gamma[c] * inv_std[c] / m;
        for b in 0..n {
            for j in b * size + c * sp..b * size + (c + 1) * sp {
                dxs[j] = k * (m * dys[j] - sb - xh[j] * sg);
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn global_pool(x: &Array2<f64>, s: Shape) -> Array2<f64> {
    let sp = s.spatial();
    let mut y = Array2::zeros((x.nrows(), s.c));
    for (mut yr, xr) in y.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
        for c in 0..s.c {
            yr[c] = xr.slice(ndarray::s![c * sp..(c + 1) * sp]).sum() / sp as f64;
        }
    }
    y
}

/// `(N * oh * ow) x (cin * k * k)` patch matrix with zero padding `k / 2`.
fn im2col(x: &Array2<f64>, sin: Shape, sout: Shape, k: usize, stride: usize) -> Array2<f64> {
    let n = x.nrows();
    let pad = (k / 2) as isize;
    let kk = sin.c * k * k;
    let mut cols = Array2::zeros((n * sout.spatial(), kk));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().unwrap();
    let size = sin.size();
    for b in 0..n {
        let xb = &xs[b * size..(b + 1) * size];
        for oy in 0..sout.h {
            for ox in 0..sout.w {
                let row = ((b * sout.h + oy) * sout.w + ox) * kk;
                for ci in 0..sin.c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= sin.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= sin.w as isize {
                                continue;
                            }
                            cs[row + (ci * k + ky) * k + kx] = xb[(ci * sin.h + iy as usize) * sin.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, n: usize, sin: Shape, sout: Shape, k: usize, stride: usize) -> Array2<f64> {
    let pad = (k / 2) as isize;
    let kk = sin.c * k * k;
    let mut dx = Array2::zeros((n, sin.size()));
    let dcs = dcols.as_standard_layout();
    let dcs = dcs.as_slice().unwrap();
    let size = sin.size();
    let dxs = dx.as_slice_mut().unwrap();
    for b in 0..n {
        for oy in 0..sout.h {
            for ox in 0..sout.w {
                let row = ((b * sout.h + oy) * sout.w + ox) * kk;
                for ci in 0..sin.c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= sin.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= sin.w as isize {
                                continue;
                            }
                            dxs[b * size + (ci * sin.h + iy as usize) * sin.w + ix as usize] +=
                                dcs[row + (ci * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `(N * pixels) x C` to `N x (C * pixels)`.
fn pixels_to_rows(y: &Array2<f64>, n: usize, s: Shape) -> Array2<f64> {
    let sp = s.spatial();
    let mut out = Array2::zeros((n, s.size()));
    let os = out.as_slice_mut().unwrap();
    for b in 0..n {
        for p in 0..sp {
            let src = y.row(b * sp + p);
            for c in 0..s.c {
                os[b * s.size() + c * sp + p] = src[c];
            }
        }
    }
    out
}

fn rows_to_pixels(d: &Array2<f64>, n: usize, s: Shape) -> Array2<f64> {
    let sp = s.spatial();
    let mut out = Array2::zeros((n * sp, s.c));
    for b in 0..n {
        let row = d.row(b);
        for p in 0..sp {
            for c in 0..s.c {
                out[[b * sp + p, c]] = row[c * sp + p];
            }
        }
    }
    out
}
