use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{contract, dim_err, Result};

/// Three-layer tanh network emitting an `m x k` transform per input row.
///
/// Parameters are stored as `[w1, b1, w2, b2, w3, b3]` with weights shaped
/// `[fan_in, fan_out]` and biases `[1, fan_out]`. The output unit for entry
/// `(j, r)` of the transform is `j * k + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEncoder {
    pub m: usize,
    pub k: usize,
    pub alpha: usize,
    pub layer_dims: Vec<usize>,
    pub params: Vec<Tensor>,
}

/// Default hidden widths for input dimension `m`.
pub fn default_hidden(m: usize) -> [usize; 2] {
    [(4 * m).max(32), (2 * m).max(16)]
}

impl MetaEncoder {
    /// Glorot-uniform weights, zero biases.
    pub fn new(m: usize, k: usize, alpha: usize, hidden: [usize; 2], seed: u64) -> Result<Self> {
        if m == 0 || k == 0 {
            return contract("meta-encoder needs m > 0 and k > 0");
        }
        check_alpha(alpha, m)?;
        let dims = vec![m, hidden[0], hidden[1], m * k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(6);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(Tensor::new(vec![fan_in, fan_out], data)?);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self {
            m,
            k,
            alpha,
            layer_dims: dims,
            params,
        })
    }

    /// Raw transforms for a batch `[n, m]`, shaped `[n, m, k]`.
    pub fn transforms(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.m {
            return dim_err(format!(
                "expected [n, {}] input, got {:?}",
                self.m,
                x.shape()
            ));
        }
        let p = &self.params;
        let h1 = x
            .matmul(&p[0])?
            .zip_with(&p[1], |a, b| a + b)?
            .map(f64::tanh);
        let h2 = h1
            .matmul(&p[2])?
            .zip_with(&p[3], |a, b| a + b)?
            .map(f64::tanh);
        let o = h2.matmul(&p[4])?.zip_with(&p[5], |a, b| a + b)?;
        o.reshaped(&[x.shape()[0], self.m, self.k])
    }

    /// Raw transform `W(x)` for a single row.
    pub fn forward_transform(&self, x: &[f64]) -> Result<Tensor> {
        let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
        self.transforms(&xt)?.reshaped(&[self.m, self.k])
    }

    /// `sp_alpha(W(x))` for a single row at the model's sparsity level.
    pub fn sparse_transform(&self, x: &[f64]) -> Result<Tensor> {
        sparsify_topk(&self.forward_transform(x)?, self.alpha)
    }

    /// Latent code `z = sp_alpha(W(x))^T x`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(apply_transform(&self.sparse_transform(x)?, x))
    }

    /// Sparse transforms `[n, m, k]` and latents `[n, k]` for a batch.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let w = self.transforms(x)?;
        let mask = topk_mask(&w, self.alpha)?;
        let sw = w.zip_with(&mask, |a, b| a * b)?;
        let n = x.shape()[0];
        let z = x
            .reshaped(&[n, 1, self.m])?
            .matmul(&sw)?
            .reshaped(&[n, self.k])?;
        Ok((sw, z))
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

fn check_alpha(alpha: usize, m: usize) -> Result<()> {
    if alpha == 0 || alpha > m {
        return contract(format!("sparsity level {alpha} outside 1..={m}"));
    }
    Ok(())
}

/// `z_r = sum_j W[j, r] x_j` for an `m x k` transform.
pub fn apply_transform(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, k) = (w.shape()[0], w.shape()[1]);
    let mut z = vec![0.0; k];
    for j in 0..m {
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += w.data()[j * k + r] * x[j];
        }
    }
    z
}

/// 0/1 mask keeping the `alpha` largest-magnitude entries of every column of
/// each trailing `m x k` matrix. Ties go to the lower row index.
pub fn topk_mask(w: &Tensor, alpha: usize) -> Result<Tensor> {
    let r = w.rank();
    if r < 2 {
        return dim_err("top-alpha mask needs an m x k matrix");
    }
    let (m, k) = (w.shape()[r - 2], w.shape()[r - 1]);
    check_alpha(alpha, m)?;
    if alpha == m {
        return Ok(Tensor::ones(w.shape()));
    }
    let mut mask = vec![0.0; w.len()];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for (b, chunk) in w.data().chunks(m * k).enumerate() {
        for c in 0..k {
            order.clear();
            order.extend(0..m);
            order.sort_by(|&a, &bb| {
                chunk[bb * k + c]
                    .abs()
                    .total_cmp(&chunk[a * k + c].abs())
                    .then(a.cmp(&bb))
            });
            for &j in &order[..alpha] {
                mask[b * m * k + j * k + c] = 1.0;
            }
        }
    }
    Tensor::new(w.shape().to_vec(), mask)
}

/// `sp_alpha(W)`: per column keep the `alpha` largest magnitudes, zero the rest.
pub fn sparsify_topk(w: &Tensor, alpha: usize) -> Result<Tensor> {
    let mask = topk_mask(w, alpha)?;
    w.zip_with(&mask, |a, b| a * b)
}

/// Nodes produced by running the network inside a [`Graph`].
pub struct GraphForward {
    pub x: Var,
    pub h1: Var,
    pub h2: Var,
    /// Raw transforms `[n, m, k]`.
    pub w: Var,
    /// Constant top-alpha mask of `w`.
    pub mask: Var,
    /// Masked transforms `[n, m, k]`.
    pub sw: Var,
    /// Latents `[n, k]`.
    pub z: Var,
}

/// Records the network on `x: [n, m]` with the given parameter nodes. The
/// mask is computed from the current values and enters as a constant.
pub fn graph_forward(
    g: &mut Graph,
    params: &[Var],
    x: Var,
    m: usize,
    k: usize,
    alpha: usize,
) -> Result<GraphForward> {
    let n = g.shape(x)[0];
    let a1 = g.matmul(x, params[0])?;
    let a1 = g.add(a1, params[1])?;
    let h1 = g.tanh(a1)?;
    let a2 = g.matmul(h1, params[2])?;
    let a2 = g.add(a2, params[3])?;
    let h2 = g.tanh(a2)?;
    let o = g.matmul(h2, params[4])?;
    let o = g.add(o, params[5])?;
    let w = g.reshape(o, &[n, m, k])?;
    let mask = topk_mask(g.value(w), alpha)?;
    let mask = g.input(mask);
    let sw = g.mul(w, mask)?;
    let xr = g.reshape(x, &[n, 1, m])?;
    let z = g.matmul(xr, sw)?;
    let z = g.reshape(z, &[n, k])?;
    Ok(GraphForward {
        x,
        h1,
        h2,
        w,
        mask,
        sw,
        z,
    })
}
