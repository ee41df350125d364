//! L2-regularized logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::tfidf::SparseVec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { l2: 1e-4, max_epochs: 1000, tolerance: 1e-6 }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss plus `(l2 / 2)·‖w‖²`; labels are 0 or 1.
pub fn objective(w: &[f64], b: f64, xs: &[SparseVec], ys: &[u8], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = x.dot(w) + b;
            softplus(z) - f64::from(y) * z
        })
        .sum::<f64>()
        / n;
    loss + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient of [`objective`] with respect to `(w, b)`.
pub fn gradient(w: &[f64], b: f64, xs: &[SparseVec], ys: &[u8], l2: f64) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let residual = (sigmoid(x.dot(w) + b) - f64::from(y)) / n;
        for &(i, v) in &x.0 {
            gw[i] += residual * v;
        }
        gb += residual;
    }
    (gw, gb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
}

/// Minimizes [`objective`] from zero with a constant step `1 / L`, where `L`
/// bounds the gradient's Lipschitz constant, until the gradient's ∞-norm
/// drops below the tolerance or the epoch budget runs out.
pub fn train(xs: &[SparseVec], ys: &[u8], dim: usize, config: &LogRegConfig) -> Result<LogRegFit> {
    if xs.iter().flat_map(|x| &x.0).any(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric { context: "logistic regression features".into() });
    }
    let max_sq = xs.iter().map(|x| x.norm_sq()).fold(0.0, f64::max);
    let lipschitz = 0.25 * (max_sq + 1.0) + config.l2;
    let step = 1.0 / lipschitz;

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut epochs = 0;
    while epochs < config.max_epochs {
        let (gw, gb) = gradient(&w, b, xs, ys, config.l2);
        let inf_norm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if inf_norm < config.tolerance {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= step * gi;
        }
        b -= step * gb;
        epochs += 1;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numeric { context: "logistic regression weights".into() });
    }
    Ok(LogRegFit { weights: w, bias: b, epochs })
}
