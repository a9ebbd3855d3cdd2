use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stream::{Example, Image, Input};

use super::config::Augmentation;
use super::network::Shape;

/// Images are converted to this many channels (grey is replicated, alpha
/// dropped).
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network input shape for an input: feature vectors keep their length,
/// images become `3 x r x r`.
pub fn input_shape(input: &Input, resolution: usize) -> Shape {
    match input {
        Input::Features(v) => Shape::flat(v.len()),
        Input::Image(_) => Shape { c: IMAGE_CHANNELS, h: resolution, w: resolution },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Crop {
    top: f64,
    left: f64,
    height: f64,
    width: f64,
}

fn center_square(img: &Image) -> Crop {
    let side = img.height.min(img.width) as f64;
    Crop {
        top: ((img.height as f64 - side) / 2.0).floor(),
        left: ((img.width as f64 - side) / 2.0).floor(),
        height: side,
        width: side,
    }
}

/// Random crop covering 8%-100% of the area with aspect ratio in [3/4, 4/3];
/// falls back to the central square after ten rejected draws.
fn random_resized(img: &Image, rng: &mut impl Rng) -> Crop {
    let (h, w) = (img.height as f64, img.width as f64);
    let area = h * w;
    let (lo, hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.random_range(0.08..=1.0);
        let aspect = rng.random_range(lo..=hi).exp();
        let cw = (target * aspect).sqrt().round();
        let ch = (target / aspect).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=(h - ch) as u32) as f64;
            let left = rng.random_range(0..=(w - cw) as u32) as f64;
            return Crop { top, left, height: ch, width: cw };
        }
    }
    center_square(img)
}

/// Bilinear resample of the crop to `r x r`, CHW order, scaled to roughly
/// zero mean and unit range.
fn crop_resize(img: &Image, crop: Crop, r: usize, flip: bool) -> Vec<f64> {
    let mut out = vec![0.0; IMAGE_CHANNELS * r * r];
    let sy = crop.height / r as f64;
    let sx = crop.width / r as f64;
    let chans = img.channels as usize;
    let src_c = |c: usize| if chans >= IMAGE_CHANNELS { c } else { 0 };
    let (hmax, wmax) = (img.height as f64 - 1.0, img.width as f64 - 1.0);
    for oy in 0..r {
        let fy =
            (crop.top + (oy as f64 + 0.5) * sy - 0.5).clamp(crop.top, crop.top + crop.height - 1.0).clamp(0.0, hmax);
        let y0 = fy.floor();
        let y1 = (y0 + 1.0).min(hmax);
        let ty = fy - y0;
        for ox in 0..r {
            let dst_x = if flip { r - 1 - ox } else { ox };
            let fx = (crop.left + (ox as f64 + 0.5) * sx - 0.5)
                .clamp(crop.left, crop.left + crop.width - 1.0)
                .clamp(0.0, wmax);
            let x0 = fx.floor();
            let x1 = (x0 + 1.0).min(wmax);
            let tx = fx - x0;
            for c in 0..IMAGE_CHANNELS {
                let sc = src_c(c) as u8;
                let p = |y: f64, x: f64| img.at(y as u32, x as u32, sc) as f64;
                let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
                let bot = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
                let v = top * (1.0 - ty) + bot * ty;
                out[(c * r + oy) * r + dst_x] = (v / 255.0 - 0.5) / 0.25;
            }
        }
    }
    out
}

/// Network input for one example. Eval mode takes the central
/// `min(h, w)` square and resizes it to `r x r`; train mode draws a random
/// resized crop and a horizontal flip with probability 0.5 when enabled.
/// Feature vectors pass through unchanged.
pub fn preprocess(input: &Input, mode: Mode, r: usize, aug: Augmentation, rng: &mut impl Rng) -> Vec<f64> {
    match input {
        Input::Features(v) => v.iter().map(|&x| x as f64).collect(),
        Input::Image(img) => {
            let train = mode == Mode::Train;
            let crop = if train && aug.random_resized_crop { random_resized(img, rng) } else { center_square(img) };
            let flip = train && aug.horizontal_flip && rng.random_bool(0.5);
            crop_resize(img, crop, r, flip)
        }
    }
}

/// Stacks preprocessed examples into an `N x size` matrix.
pub(crate) fn batch_matrix<'a>(
    examples: impl ExactSizeIterator<Item = &'a Example>,
    shape: Shape,
    mode: Mode,
    aug: Augmentation,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let n = examples.len();
    let size = shape.size();
    let mut data = Vec::with_capacity(n * size);
    for ex in examples {
        let v = preprocess(&ex.input, mode, shape.h, aug, rng);
        if v.len() != size {
            return Err(Error::Shape(format!("input of size {} where the network expects {shape}", v.len())));
        }
        data.extend(v);
    }
    Ok(Array2::from_shape_vec((n, size), data).expect("sizes checked"))
}
