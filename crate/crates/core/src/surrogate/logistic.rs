use serde::{Deserialize, Serialize};

use crate::config::TOL;
use crate::error::{contract, dim_err, Result};

/// Binary logistic model `sigmoid(b0 + beta . z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLogistic {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl BinaryLogistic {
    pub fn score(&self, z: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Logistic surrogate. Two classes use one model for class 1; more classes
/// use one-vs-rest models whose probabilities are softmax-normalised scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSurrogate {
    pub n_classes: usize,
    pub models: Vec<BinaryLogistic>,
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 20_000,
            grad_tol: TOL.logistic_grad_tol,
        }
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))` without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Mean log-loss plus `l2/2 |beta|^2` (intercept unpenalised) and its gradient
/// laid out as `[d/d b0, d/d beta...]`.
pub fn objective(z: &[Vec<f64>], t: &[f64], l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let n = z.len() as f64;
    let k = theta.len() - 1;
    let mut loss = 0.0;
    let mut grad = vec![0.0; k + 1];
    for (zi, &ti) in z.iter().zip(t) {
        let s = theta[0] + (0..k).map(|r| theta[r + 1] * zi[r]).sum::<f64>();
        loss += softplus(s) - ti * s;
        let e = sigmoid(s) - ti;
        grad[0] += e;
        for r in 0..k {
            grad[r + 1] += e * zi[r];
        }
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for r in 0..k {
        loss += 0.5 * l2 * theta[r + 1] * theta[r + 1];
        grad[r + 1] += l2 * theta[r + 1];
    }
    (loss, grad)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Full-batch gradient descent with Armijo backtracking. The trial step
/// starts at twice the last accepted one.
fn fit_binary(z: &[Vec<f64>], t: &[f64], k: usize, cfg: &LogisticConfig) -> BinaryLogistic {
    let mut theta = vec![0.0; k + 1];
    let (mut loss, mut grad) = objective(z, t, cfg.l2, &theta);
    let mut step = 1.0;
    for _ in 0..cfg.max_iter {
        if inf_norm(&grad) < cfg.grad_tol {
            break;
        }
        let gg: f64 = grad.iter().map(|g| g * g).sum();
        step *= 2.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let (l, g) = objective(z, t, cfg.l2, &trial);
            if l <= loss - 0.5 * step * gg || step < 1e-16 {
                theta = trial;
                loss = l;
                grad = g;
                break;
            }
            step *= 0.5;
        }
    }
    BinaryLogistic {
        intercept: theta[0],
        coef: theta[1..].to_vec(),
    }
}

impl LogisticSurrogate {
    pub fn fit(
        z: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        cfg: &LogisticConfig,
    ) -> Result<Self> {
        if z.len() != labels.len() {
            return dim_err("latent rows and labels differ in length");
        }
        if z.len() < 2 {
            return contract("logistic surrogate needs at least two rows");
        }
        let k = z[0].len();
        let mut present = vec![false; n_classes.max(2)];
        for &l in labels {
            if l >= present.len() {
                return contract(format!("label {l} outside {n_classes} classes"));
            }
            present[l] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return contract("logistic surrogate needs at least two classes");
        }
        let n_classes = n_classes.max(2);
        let targets = |c: usize| {
            labels
                .iter()
                .map(|&l| f64::from(u8::from(l == c)))
                .collect::<Vec<_>>()
        };
        let models = if n_classes == 2 {
            vec![fit_binary(z, &targets(1), k, cfg)]
        } else {
            (0..n_classes)
                .map(|c| fit_binary(z, &targets(c), k, cfg))
                .collect()
        };
        Ok(Self { n_classes, models })
    }

    pub fn predict_proba(&self, z: &[f64]) -> Vec<f64> {
        if self.n_classes == 2 {
            let p = sigmoid(self.models[0].score(z));
            return vec![1.0 - p, p];
        }
        let s: Vec<f64> = self.models.iter().map(|m| m.score(z)).collect();
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
        let tot: f64 = e.iter().sum();
        e.into_iter().map(|v| v / tot).collect()
    }

    pub fn predict(&self, z: &[f64]) -> usize {
        argmax(&self.predict_proba(z))
    }

    /// Coefficient vector whose latent contributions favour `class`.
    pub fn coef_for(&self, class: usize) -> Vec<f64> {
        if self.n_classes == 2 {
            let c = &self.models[0].coef;
            return if class == 1 {
                c.clone()
            } else {
                c.iter().map(|v| -v).collect()
            };
        }
        self.models[class].coef.clone()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
