//! Distances between inputs, latents, transforms and black-box outputs, and
//! the Gaussian neighbor distributions built from them.

use serde::{Deserialize, Serialize};

use crate::config::TOL;
use crate::diffcore::Tensor;
use crate::error::{contract, dim_err, Error, Result};
use crate::par;

/// Split of the encoded feature columns into continuous ones and one-hot groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub m: usize,
    pub continuous_indices: Vec<usize>,
    pub categorical_groups: Vec<Vec<usize>>,
    pub h: usize,
}

impl FeatureSchema {
    pub fn all_continuous(m: usize) -> Self {
        Self {
            m,
            continuous_indices: (0..m).collect(),
            categorical_groups: vec![],
            h: 0,
        }
    }

    /// Builds a schema from one-hot groups; all other columns are continuous.
    pub fn with_groups(m: usize, categorical_groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; m];
        for &j in categorical_groups.iter().flatten() {
            if j >= m || seen[j] {
                return contract(format!("categorical index {j} out of range or repeated"));
            }
            seen[j] = true;
        }
        let h = categorical_groups.iter().map(Vec::len).sum();
        Ok(Self {
            m,
            continuous_indices: (0..m).filter(|&j| !seen[j]).collect(),
            categorical_groups,
            h,
        })
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.categorical_groups.iter().flatten().copied().collect()
    }
}

fn sq_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// `1 - cos(u, v)`; a zero vector on either side gives 1.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (sq_norm(u), sq_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // sqrt of the product keeps u == v exact
    (1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    1.0 - cosine_distance(u, v)
}

pub fn hamming_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return dim_err(format!("hamming on lengths {} and {}", u.len(), v.len()));
    }
    if u.is_empty() {
        return Ok(0.0);
    }
    let diff = u.iter().zip(v).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / u.len() as f64)
}

fn gather(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&j| x[j]).collect()
}

/// Mixed input distance: cosine on continuous columns weighted by `(m-h)/m`,
/// Hamming on one-hot columns weighted by `h/m`.
pub fn input_distance(a: &[f64], b: &[f64], schema: &FeatureSchema) -> Result<f64> {
    if a.len() != schema.m || b.len() != schema.m {
        return dim_err(format!(
            "input_distance expects length {}, got {} and {}",
            schema.m,
            a.len(),
            b.len()
        ));
    }
    if schema.h == 0 {
        return Ok(cosine_distance(a, b));
    }
    let m = schema.m as f64;
    let h = schema.h as f64;
    let cat = schema.categorical_indices();
    let d_cat = hamming_distance(&gather(a, &cat), &gather(b, &cat))?;
    if schema.continuous_indices.is_empty() {
        return Ok(d_cat);
    }
    let ci = &schema.continuous_indices;
    let d_cont = cosine_distance(&gather(a, ci), &gather(b, ci));
    Ok((m - h) / m * d_cont + h / m * d_cat)
}

/// Mean per-column cosine distance between two `m x k` transforms.
pub fn transform_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return dim_err(format!(
            "transform_distance on {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let col = |t: &Tensor, r: usize| (0..m).map(|j| t.at2(j, r)).collect::<Vec<_>>();
    let total: f64 = (0..k)
        .map(|r| cosine_distance(&col(a, r), &col(b, r)))
        .sum();
    Ok(total / k as f64)
}

/// `n x n` matrix of `dist(i, j)` with a zero diagonal.
pub fn pairwise<F>(n: usize, dist: F) -> Tensor
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| if i == j { 0.0 } else { dist(i, j) })
            .collect::<Vec<_>>()
    });
    Tensor::new(vec![n, n], rows.concat()).expect("square")
}

/// Row-stochastic neighbor probabilities `S[i][j]` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDistribution {
    pub rows: Tensor,
}

impl NeighborDistribution {
    pub fn n(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }
}

/// Gaussian kernel `exp(-d^2)` normalised over `j != i`, evaluated with the
/// row's smallest squared distance subtracted before exponentiating.
pub fn neighbor_distribution(dist: &Tensor) -> Result<NeighborDistribution> {
    if dist.rank() != 2 || dist.shape()[0] != dist.shape()[1] {
        return dim_err(format!(
            "distance matrix must be square, got {:?}",
            dist.shape()
        ));
    }
    let n = dist.shape()[0];
    if n < 2 {
        return contract("neighbor distribution needs at least two points");
    }
    let mut out = vec![0.0; n * n];
    par::for_each_row(&mut out, n, |i, row| {
        let d = dist.row(i);
        let shift = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j] * d[j])
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for j in 0..n {
            if j != i {
                row[j] = (-(d[j] * d[j] - shift)).exp();
                total += row[j];
            }
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    Ok(NeighborDistribution {
        rows: Tensor::new(vec![n, n], out)?,
    })
}

/// `sum_j p_j log(p_j / q_j)`, skipping `p_j = 0` and clamping `q` from below.
pub fn kl_row(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "kl_row on lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &qj)| pj * (pj / qj.max(TOL.kl_clamp)).ln())
        .sum())
}

/// Mean over rows of `KL(P_i || Q_i)`.
pub fn kl_mean(p: &NeighborDistribution, q: &NeighborDistribution) -> Result<f64> {
    if p.n() != q.n() {
        return dim_err("distributions over different point sets");
    }
    let mut total = 0.0;
    for i in 0..p.n() {
        total += kl_row(p.row(i), q.row(i))?;
    }
    Ok(total / p.n() as f64)
}
