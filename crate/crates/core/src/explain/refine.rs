use crate::diffcore::Tensor;
use crate::error::{contract, Error, Result};
use crate::metaenc::{apply_transform, MetaEncoder};
use crate::surrogate::{LatentRule, Surrogate};

use super::rules::{oblique_to_axis, AxisRule};
use super::store::LatentStore;

/// Grid points per axis when searching interpolation weights.
pub const REFINE_GRID: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub neighbor: usize,
    pub gamma_w: f64,
    pub gamma_x: f64,
    /// `W + gamma_w (W_nn - W)`.
    pub w_star: Tensor,
    /// `gamma_x W_nn^T (x_nn - x)`.
    pub eps: Vec<f64>,
    pub z_star: Vec<f64>,
}

/// Selected grid cell: smallest squared shift from `z`, then smallest
/// `gamma_w + gamma_x`, then first in scan order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridChoice {
    pub iw: usize,
    pub ix: usize,
    pub dist2: f64,
}

/// Scans the `grid x grid` cells `(iw/grid, ix/grid)` for `1 <= iw, ix <= grid`.
/// `latent(iw, ix)` returns the candidate latent; `feasible` checks its label.
pub fn grid_search(
    grid: usize,
    z: &[f64],
    latent: impl Fn(usize, usize) -> Vec<f64>,
    feasible: impl Fn(&[f64]) -> bool,
) -> Option<GridChoice> {
    let mut best: Option<GridChoice> = None;
    for iw in 1..=grid {
        for ix in 1..=grid {
            let zc = latent(iw, ix);
            if !feasible(&zc) {
                continue;
            }
            let d2: f64 = zc.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some(b) => d2 < b.dist2 || (d2 == b.dist2 && iw + ix < b.iw + b.ix),
            };
            if better {
                best = Some(GridChoice { iw, ix, dist2: d2 });
            }
        }
    }
    best
}

/// Moves the explained latent toward the closest valid training latent of
/// the black-box class until the surrogate agrees with the black-box.
#[allow(clippy::too_many_arguments)]
pub fn refine_fidelity(
    x: &[f64],
    z: &[f64],
    w: &Tensor,
    encoder: &MetaEncoder,
    surrogate: &Surrogate,
    b_label: usize,
    store: &LatentStore,
    grid: usize,
) -> Result<RefinementResult> {
    if grid == 0 {
        return contract("refinement grid needs at least one point per axis");
    }
    let nn = store
        .nearest_valid(z, b_label)
        .ok_or(Error::NoValidNeighbor { label: b_label })?;
    let x_nn = &store.x[nn];
    let z_nn = &store.z[nn];
    let w_nn = encoder.sparse_transform(x_nn)?;
    let toward = apply_transform(&w_nn, x);
    let diff: Vec<f64> = x_nn.iter().zip(x).map(|(a, b)| a - b).collect();
    let offset = apply_transform(&w_nn, &diff);
    let g = grid as f64;
    let latent = |iw: usize, ix: usize| -> Vec<f64> {
        if iw == grid && ix == grid {
            // the far corner is the neighbor itself
            return z_nn.clone();
        }
        let (gw, gx) = (iw as f64 / g, ix as f64 / g);
        (0..z.len())
            .map(|r| (1.0 - gw) * z[r] + gw * toward[r] + gx * offset[r])
            .collect()
    };
    let choice = grid_search(grid, z, latent, |zc| surrogate.predict(zc) == b_label)
        .ok_or_else(|| Error::Contract("stored neighbor is not surrogate-valid".into()))?;
    let (gamma_w, gamma_x) = (choice.iw as f64 / g, choice.ix as f64 / g);
    let w_star = w.zip_with(&w_nn, |a, b| a + gamma_w * (b - a))?;
    let eps = offset.iter().map(|o| gamma_x * o).collect();
    Ok(RefinementResult {
        neighbor: nn,
        gamma_w,
        gamma_x,
        w_star,
        eps,
        z_star: latent(choice.iw, choice.ix),
    })
}

/// `psi_j = sum_r beta_r W[j, r]`.
pub fn importance_pullback(w: &Tensor, beta: &[f64]) -> Result<Vec<f64>> {
    let (m, k) = (w.shape()[0], w.shape()[1]);
    if beta.len() != k {
        return crate::error::dim_err(format!("{k} latent dims but {} coefficients", beta.len()));
    }
    Ok((0..m)
        .map(|j| (0..k).map(|r| beta[r] * w.data()[j * k + r]).sum())
        .collect())
}

pub fn refined_importance(refinement: &RefinementResult, beta: &[f64]) -> Result<Vec<f64>> {
    importance_pullback(&refinement.w_star, beta)
}

/// Axis rule from the latent rule of the refined latent. Converting the
/// shifted bounds `rule - eps` on `W*^T x` gives the same offsets as the
/// original bounds on `z*`, which is what is computed here.
pub fn refined_rule(
    refinement: &RefinementResult,
    rule: &LatentRule,
    x: &[f64],
    class: usize,
) -> Result<AxisRule> {
    oblique_to_axis(rule, &refinement.w_star, x, &refinement.z_star, class)
}
