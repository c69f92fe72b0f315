//! Training objective of the meta-encoder, recorded on a [`Graph`].

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TOL;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::geometry::{self, FeatureSchema};

use super::model::{graph_forward, GraphForward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    /// Exact input Jacobian of the encode map.
    Jacobian,
    /// Finite probes `|eta(x + d) - eta(x) - W(x) d|^2 / |d|^2`.
    Perturbation,
}

impl FromStr for StabilityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobian" => Ok(Self::Jacobian),
            "perturbation" => Ok(Self::Perturbation),
            other => Err(Error::Contract(format!("unknown stability mode {other:?}"))),
        }
    }
}

/// Coefficients of the regularizers relative to the input-side KL term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_y: f64,
    pub lambda_st: f64,
    pub lambda_so: f64,
    pub lambda_co: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_y: 1.0,
            lambda_st: 1.0,
            lambda_so: 1.0,
            lambda_co: 1.0,
        }
    }
}

/// Everything the loss needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub m: usize,
    pub k: usize,
    pub alpha: usize,
    pub weights: LossWeights,
    pub mode: StabilityMode,
    pub probe_norm: f64,
}

/// Fixed neighbor distributions of a batch in input space and black-box
/// output space, with their logs (diagonal entries are unused).
#[derive(Debug, Clone)]
pub struct BatchTargets {
    pub p_x: Tensor,
    pub log_p_x: Tensor,
    pub p_y: Tensor,
    pub log_p_y: Tensor,
}

fn with_log(d: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = geometry::neighbor_distribution(d)?.rows;
    let log = s.map(|v| if v > 0.0 { v.ln() } else { 0.0 });
    Ok((s, log))
}

impl BatchTargets {
    /// `x: [n, m]` inputs, `y: [n, c]` black-box probabilities.
    pub fn new(x: &Tensor, y: &Tensor, schema: &FeatureSchema) -> Result<Self> {
        let n = x.shape()[0];
        if n < 2 {
            return contract("KL losses need a batch of at least two rows");
        }
        if y.shape()[0] != n {
            return contract("inputs and outputs are not row-aligned");
        }
        let dx = geometry::pairwise(n, |i, j| {
            geometry::input_distance(x.row(i), x.row(j), schema).unwrap_or(1.0)
        });
        let dy = geometry::pairwise(n, |i, j| geometry::cosine_distance(y.row(i), y.row(j)));
        let (p_x, log_p_x) = with_log(&dx)?;
        let (p_y, log_p_y) = with_log(&dy)?;
        Ok(Self {
            p_x,
            log_p_x,
            p_y,
            log_p_y,
        })
    }
}

/// A neighbor distribution living in the graph.
#[derive(Debug, Clone, Copy)]
pub struct Dist {
    pub s: Var,
    pub log_s: Var,
}

fn offdiag(n: usize) -> Tensor {
    Tensor::ones(&[n, n])
        .zip_with(&Tensor::eye(n), |a, b| a - b)
        .expect("same shape")
}

/// Pairwise cosine distances between rows of `a: [n, d]`.
pub fn cosine_distance_matrix(g: &mut Graph, a: Var) -> Result<Var> {
    let sq = g.square(a)?;
    let nrm = g.sum_axis(sq, 1)?;
    let nrm = g.shift(nrm, TOL.norm_eps)?;
    let nrm = g.sqrt(nrm)?;
    let u = g.div(a, nrm)?;
    let ut = g.transpose(u)?;
    let c = g.matmul(u, ut)?;
    let d = g.neg(c)?;
    g.shift(d, 1.0)
}

/// Pairwise mean per-column cosine distances between transforms `[n, m, k]`.
pub fn transform_distance_matrix(g: &mut Graph, w: Var) -> Result<Var> {
    let s = g.shape(w).to_vec();
    let (n, m, k) = (s[0], s[1], s[2]);
    let sq = g.square(w)?;
    let nrm = g.sum_axis(sq, 1)?;
    let nrm = g.shift(nrm, TOL.norm_eps)?;
    let nrm = g.sqrt(nrm)?;
    let wn = g.div(w, nrm)?;
    let f = g.reshape(wn, &[n, m * k])?;
    let ft = g.transpose(f)?;
    let c = g.matmul(f, ft)?;
    let c = g.scale(c, -1.0 / k as f64)?;
    g.shift(c, 1.0)
}

/// `S[i][j] = exp(-d^2) / sum_{v != i} exp(-d_iv^2)`. Distances here are
/// bounded by 2, so no max-shift is needed to keep the sums positive.
pub fn neighbor_dist(g: &mut Graph, d: Var) -> Result<Dist> {
    let n = g.shape(d)[0];
    let d2 = g.square(d)?;
    let neg = g.neg(d2)?;
    let e = g.exp(neg)?;
    let mask = g.input(offdiag(n));
    let e = g.mul(e, mask)?;
    let rs = g.sum_axis(e, 1)?;
    let s = g.div(e, rs)?;
    let log_rs = g.log(rs)?;
    let log_s = g.sub(neg, log_rs)?;
    Ok(Dist { s, log_s })
}

/// `(1/n) sum_i KL(P_i || Q_i)` over off-diagonal entries.
pub fn kl_mean(g: &mut Graph, p: Dist, q: Dist) -> Result<Var> {
    let n = g.shape(p.s)[0];
    let diff = g.sub(p.log_s, q.log_s)?;
    let t = g.mul(p.s, diff)?;
    let mask = g.input(offdiag(n));
    let t = g.mul(t, mask)?;
    let s = g.sum(t)?;
    g.scale(s, 1.0 / n as f64)
}

/// `(L_x, L_y)` KL terms for one batch.
pub fn loss_kl(g: &mut Graph, fwd: &GraphForward, targets: &BatchTargets) -> Result<(Var, Var)> {
    let dz = cosine_distance_matrix(g, fwd.z)?;
    let pz = neighbor_dist(g, dz)?;
    let dw = transform_distance_matrix(g, fwd.sw)?;
    let pw = neighbor_dist(g, dw)?;
    let px = Dist {
        s: g.input(targets.p_x.clone()),
        log_s: g.input(targets.log_p_x.clone()),
    };
    let py = Dist {
        s: g.input(targets.p_y.clone()),
        log_s: g.input(targets.log_p_y.clone()),
    };
    let a = kl_mean(g, px, pz)?;
    let b = kl_mean(g, pz, pw)?;
    let lx = g.add(a, b)?;
    let ly = kl_mean(g, py, pz)?;
    Ok((lx, ly))
}

/// Mean over the batch of `|W^T W - I_k|_F^2` on the masked transforms.
pub fn loss_soft_orthogonality(g: &mut Graph, sw: Var) -> Result<Var> {
    let s = g.shape(sw).to_vec();
    let (n, k) = (s[0], s[2]);
    let wt = g.transpose(sw)?;
    let gram = g.matmul(wt, sw)?;
    let eye = g.input(Tensor::eye(k));
    let d = g.sub(gram, eye)?;
    let d = g.square(d)?;
    let t = g.sum(d)?;
    g.scale(t, 1.0 / n as f64)
}

/// `|C(Z) - I_k|_F^2` with Pearson correlations over the batch.
pub fn loss_collinearity(g: &mut Graph, z: Var) -> Result<Var> {
    let s = g.shape(z).to_vec();
    let (n, k) = (s[0], s[1]);
    if n < 2 {
        return contract("collinearity needs at least two rows");
    }
    let inv_n = 1.0 / n as f64;
    let mean = g.sum_axis(z, 0)?;
    let mean = g.scale(mean, inv_n)?;
    let zc = g.sub(z, mean)?;
    let sq = g.square(zc)?;
    let var = g.sum_axis(sq, 0)?;
    let var = g.scale(var, inv_n)?;
    let var = g.clamp_min(var, TOL.std_floor * TOL.std_floor)?;
    let sd = g.sqrt(var)?;
    let zs = g.div(zc, sd)?;
    let zt = g.transpose(zs)?;
    let c = g.matmul(zt, zs)?;
    let c = g.scale(c, inv_n)?;
    let eye = g.input(Tensor::eye(k));
    let d = g.sub(c, eye)?;
    let d = g.square(d)?;
    g.sum(d)
}

/// Exact stability penalty `mean_i |J_i - W_i|_F^2`.
///
/// With the mask held fixed, `J - W` at row `i` is
/// `D[r, j] = sum_v M[v,r] x_v dW[v,r]/dx_j`, which factors through the
/// network as `C_i diag(1-h2^2) A2^T diag(1-h1^2) A1^T` with
/// `C_i[r, b] = sum_v M[v,r] x_v A3[b, (v,r)]`. All `k` slices are evaluated
/// as one batched product.
pub fn loss_stability_jacobian(
    g: &mut Graph,
    params: &[Var],
    fwd: &GraphForward,
    m: usize,
    k: usize,
) -> Result<Var> {
    let x = g.value(fwd.x).clone();
    let mask = g.value(fwd.mask).clone();
    let n = x.shape()[0];
    let h1 = g.shape(params[0])[1];
    let h2 = g.shape(params[2])[1];

    let mut gp = vec![0.0; k * m * n];
    for i in 0..n {
        for v in 0..m {
            let xv = x.data()[i * m + v];
            for r in 0..k {
                gp[(r * m + v) * n + i] = mask.data()[(i * m + v) * k + r] * xv;
            }
        }
    }
    let gp = g.input(Tensor::new(vec![k, m, n], gp)?);

    let a3 = g.reshape(params[4], &[h2 * m, k])?;
    let a3 = g.transpose(a3)?;
    let a3 = g.reshape(a3, &[k, h2, m])?;
    let c = g.matmul(a3, gp)?;

    let s2 = slope(g, fwd.h2)?;
    let e = g.mul(c, s2)?;
    let a2 = g.broadcast_to(params[2], &[k, h1, h2])?;
    let e = g.matmul(a2, e)?;
    let s1 = slope(g, fwd.h1)?;
    let e = g.mul(e, s1)?;
    let a1 = g.broadcast_to(params[0], &[k, m, h1])?;
    let d = g.matmul(a1, e)?;

    let d = g.square(d)?;
    let t = g.sum(d)?;
    g.scale(t, 1.0 / n as f64)
}

/// `(1 - h^2)^T` for a tanh layer output `h: [n, w]`.
fn slope(g: &mut Graph, h: Var) -> Result<Var> {
    let sq = g.square(h)?;
    let s = g.neg(sq)?;
    let s = g.shift(s, 1.0)?;
    g.transpose(s)
}

/// Probe-based stability penalty. Each row is displaced along every
/// coordinate axis by `probe_norm`; summing the normalised residuals over a
/// full orthonormal set of probes estimates `|J - W|_F^2`. The mask of the
/// unperturbed row is reused so the probe sees a single linear piece.
pub fn loss_stability_perturbation(
    g: &mut Graph,
    params: &[Var],
    fwd: &GraphForward,
    m: usize,
    k: usize,
    probe_norm: f64,
) -> Result<Var> {
    let x = g.value(fwd.x).clone();
    let n = x.shape()[0];
    let mut xp = Vec::with_capacity(n * m * m);
    for i in 0..n {
        for p in 0..m {
            let mut row = x.row(i).to_vec();
            row[p] += probe_norm;
            xp.extend(row);
        }
    }
    let xp = g.input(Tensor::new(vec![n * m, m], xp)?);
    let mask = g.value(fwd.mask).clone();
    let mut mrep = Vec::with_capacity(n * m * m * k);
    for chunk in mask.data().chunks(m * k) {
        for _ in 0..m {
            mrep.extend_from_slice(chunk);
        }
    }
    let mrep = g.input(Tensor::new(vec![n * m, m, k], mrep)?);

    let a1 = g.matmul(xp, params[0])?;
    let a1 = g.add(a1, params[1])?;
    let h1 = g.tanh(a1)?;
    let a2 = g.matmul(h1, params[2])?;
    let a2 = g.add(a2, params[3])?;
    let h2 = g.tanh(a2)?;
    let o = g.matmul(h2, params[4])?;
    let o = g.add(o, params[5])?;
    let wp = g.reshape(o, &[n * m, m, k])?;
    let swp = g.mul(wp, mrep)?;
    let xr = g.reshape(xp, &[n * m, 1, m])?;
    let eta_p = g.matmul(xr, swp)?;
    let eta_p = g.reshape(eta_p, &[n * m, k])?;

    let eta = g.reshape(fwd.z, &[n, 1, k])?;
    let eta = g.broadcast_to(eta, &[n, m, k])?;
    let eta = g.reshape(eta, &[n * m, k])?;
    let lin = g.scale(fwd.sw, probe_norm)?;
    let lin = g.reshape(lin, &[n * m, k])?;

    let r = g.sub(eta_p, eta)?;
    let r = g.sub(r, lin)?;
    let r = g.square(r)?;
    let t = g.sum(r)?;
    g.scale(t, 1.0 / (probe_norm * probe_norm * n as f64))
}

/// Nodes of every loss component for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub kl_x: Var,
    pub kl_y: Var,
    pub stability: Option<Var>,
    pub ortho: Var,
    pub collin: Var,
}

/// Plain values of [`LossParts`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub stability: Option<f64>,
    pub ortho: f64,
    pub collin: f64,
}

impl LossParts {
    pub fn values(&self, g: &Graph) -> LossTerms {
        let v = |x: Var| g.value(x).data()[0];
        LossTerms {
            total: v(self.total),
            kl_x: v(self.kl_x),
            kl_y: v(self.kl_y),
            stability: self.stability.map(v),
            ortho: v(self.ortho),
            collin: v(self.collin),
        }
    }
}

/// `L_x + l_y L_y + l_st L_st + l_so L_so + l_co L_co`. The stability term is
/// skipped entirely when its weight is zero.
pub fn total_loss(
    g: &mut Graph,
    params: &[Var],
    x: &Tensor,
    targets: &BatchTargets,
    spec: &LossSpec,
) -> Result<LossParts> {
    let xv = g.input(x.clone());
    let fwd = graph_forward(g, params, xv, spec.m, spec.k, spec.alpha)?;
    let (kl_x, kl_y) = loss_kl(g, &fwd, targets)?;
    let ortho = loss_soft_orthogonality(g, fwd.sw)?;
    let collin = loss_collinearity(g, fwd.z)?;
    let w = spec.weights;
    let stability = if w.lambda_st != 0.0 {
        Some(match spec.mode {
            StabilityMode::Jacobian => loss_stability_jacobian(g, params, &fwd, spec.m, spec.k)?,
            StabilityMode::Perturbation => {
                loss_stability_perturbation(g, params, &fwd, spec.m, spec.k, spec.probe_norm)?
            }
        })
    } else {
        None
    };
    let mut total = kl_x;
    for (term, lam) in [
        (Some(kl_y), w.lambda_y),
        (stability, w.lambda_st),
        (Some(ortho), w.lambda_so),
        (Some(collin), w.lambda_co),
    ] {
        if let (Some(t), true) = (term, lam != 0.0) {
            let s = g.scale(t, lam)?;
            total = g.add(total, s)?;
        }
    }
    Ok(LossParts {
        total,
        kl_x,
        kl_y,
        stability,
        ortho,
        collin,
    })
}
