//! Gaussian-process regression with a Matérn-5/2 ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_LS_BOUNDS: (f64, f64) = (-4.6, 2.3);
const LOG_VAR_BOUNDS: (f64, f64) = (-4.6, 2.3);

#[derive(Debug, Clone)]
pub struct Gp {
    x: Vec<Vec<f64>>,
    log_ls: Vec<f64>,
    log_var: f64,
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn matern(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_dist2(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum()
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel_matrix(x: &[Vec<f64>], ls: &[f64], var: f64, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = var * matern(scaled_dist2(&x[i], &x[j], ls).sqrt());
        if i == j {
            k + noise
        } else {
            k
        }
    })
}

fn factor(x: &[Vec<f64>], y: &DVector<f64>, ls: &[f64], var: f64, noise: f64) -> Option<Fit> {
    let chol = kernel_matrix(x, ls, var, noise).cholesky()?;
    let alpha = chol.solve(y);
    Some(Fit { chol, alpha })
}

/// Log marginal likelihood and its gradient w.r.t. the log length-scales
/// followed by the log signal variance.
fn log_likelihood(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    log_ls: &[f64],
    log_var: f64,
    noise: f64,
) -> Option<(f64, Vec<f64>)> {
    let ls: Vec<f64> = log_ls.iter().map(|v| v.exp()).collect();
    let var = log_var.exp();
    let fit = factor(x, y, &ls, var, noise)?;
    let n = x.len();
    let log_det: f64 = fit.chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>() * 2.0;
    let ll = -0.5 * y.dot(&fit.alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // W = alpha alpha^T - K^-1
    let kinv = fit.chol.inverse();
    let w = &fit.alpha * fit.alpha.transpose() - kinv;
    let d = ls.len();
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..n {
            let r = scaled_dist2(&x[i], &x[j], &ls).sqrt();
            let base = var * matern(r);
            let common = var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            for k in 0..d {
                let t = ((x[i][k] - x[j][k]) / ls[k]).powi(2);
                grad[k] += 0.5 * w[(i, j)] * common * t;
            }
            grad[d] += 0.5 * w[(i, j)] * base;
        }
    }
    Some((ll, grad))
}

impl Gp {
    /// Fits length-scales and signal variance by Adam ascent on the log
    /// marginal likelihood. Targets are standardized internally.
    pub fn fit(x: &[Vec<f64>], y: &[f64], noise: f64) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::Invalid("gp fit needs matching nonempty inputs".into()));
        }
        let dim = x[0].len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if sd > 1e-12 { sd } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));

        let mut params: Vec<f64> = vec![(0.5f64).ln(); dim];
        params.push(0.0);
        let (mut m, mut v) = (vec![0.0; dim + 1], vec![0.0; dim + 1]);
        let (b1, b2, lr) = (0.9, 0.999, 0.05);
        let mut best = (f64::NEG_INFINITY, params.clone());
        for t in 1..=150 {
            let Some((ll, g)) = log_likelihood(x, &ys, &params[..dim], params[dim], noise) else { break };
            if ll > best.0 {
                best = (ll, params.clone());
            }
            for k in 0..=dim {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / (1.0 - b1.powi(t));
                let vh = v[k] / (1.0 - b2.powi(t));
                let (lo, hi) = if k < dim { LOG_LS_BOUNDS } else { LOG_VAR_BOUNDS };
                params[k] = (params[k] + lr * mh / (vh.sqrt() + 1e-8)).clamp(lo, hi);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Invalid("gp kernel matrix is not positive definite".into()));
        }
        let params = best.1;
        let ls: Vec<f64> = params[..dim].iter().map(|p| p.exp()).collect();
        let fit = factor(x, &ys, &ls, params[dim].exp(), noise)
            .ok_or_else(|| Error::Invalid("gp kernel matrix is not positive definite".into()))?;
        Ok(Self {
            x: x.to_vec(),
            log_ls: params[..dim].to_vec(),
            log_var: params[dim],
            noise,
            chol: fit.chol,
            alpha: fit.alpha,
            y_mean,
            y_scale,
        })
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_ls.iter().map(|v| v.exp()).collect()
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let ls = self.length_scales();
        let var = self.log_var.exp();
        let k =
            DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| var * matern(scaled_dist2(xi, q, &ls).sqrt())));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let pvar = (var - k.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * pvar.sqrt())
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }
}
