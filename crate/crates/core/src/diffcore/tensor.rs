use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::par;

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds an `rows.len() x cols` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return dim_err("ragged rows");
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return dim_err(format!("item() on shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Elementwise binary op with numpy-style broadcasting.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Self {
                shape: self.shape.clone(),
                data,
            });
        }
        let shape = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
            Error::Dimension(format!(
                "cannot broadcast {:?} with {:?}",
                self.shape, other.shape
            ))
        })?;
        if other.data.len() == 1 {
            let b = other.data[0];
            let a = self.broadcast_to(&shape)?;
            return Ok(a.map(|v| f(v, b)));
        }
        if self.data.len() == 1 {
            let a = self.data[0];
            let b = other.broadcast_to(&shape)?;
            return Ok(b.map(|v| f(a, v)));
        }
        let a = self.broadcast_to(&shape)?;
        let b = other.broadcast_to(&shape)?;
        a.zip_with(&b, f)
    }

    /// Expands size-1 (or missing leading) axes to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        if broadcast_shape(&self.shape, shape).as_deref() != Some(shape) {
            return dim_err(format!("cannot broadcast {:?} to {:?}", self.shape, shape));
        }
        let strides = aligned_strides(&self.shape, shape);
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sums over broadcast axes so the result has `shape`; inverse of
    /// [`Tensor::broadcast_to`].
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        if broadcast_shape(shape, &self.shape).as_deref() != Some(&self.shape[..]) {
            return dim_err(format!("cannot reduce {:?} to {:?}", self.shape, shape));
        }
        let strides = aligned_strides(shape, &self.shape);
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        let mut idx = vec![0usize; self.shape.len()];
        for &v in &self.data {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data[off] += v;
            increment(&mut idx, &self.shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sums along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return dim_err(format!("axis {} out of range for {:?}", axis, self.shape));
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        self.sum_to_shape(&shape)
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return dim_err("transpose needs rank >= 2");
        }
        let (a, b) = (self.shape[r - 2], self.shape[r - 1]);
        let batch: usize = self.shape[..r - 2].iter().product();
        let mut data = vec![0.0; self.data.len()];
        for bi in 0..batch {
            let base = bi * a * b;
            for i in 0..a {
                for j in 0..b {
                    data[base + j * a + i] = self.data[base + i * b + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Ok(Self { shape, data })
    }

    /// Matrix product: `[m,p] x [p,q]` or batched `[n,m,p] x [n,p,q]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        match (self.rank(), other.rank()) {
            (2, 2) => {
                let (m, p) = (self.shape[0], self.shape[1]);
                let (p2, q) = (other.shape[0], other.shape[1]);
                if p != p2 {
                    return dim_err(format!(
                        "matmul inner dims {:?} x {:?}",
                        self.shape, other.shape
                    ));
                }
                let mut data = vec![0.0; m * q];
                par::for_each_row(&mut data, q, |i, out| {
                    gemm_row(&self.data[i * p..(i + 1) * p], &other.data, q, out)
                });
                Ok(Self {
                    shape: vec![m, q],
                    data,
                })
            }
            (3, 3) => {
                let (n, m, p) = (self.shape[0], self.shape[1], self.shape[2]);
                let (n2, p2, q) = (other.shape[0], other.shape[1], other.shape[2]);
                if n != n2 || p != p2 {
                    return dim_err(format!(
                        "batched matmul dims {:?} x {:?}",
                        self.shape, other.shape
                    ));
                }
                let mut data = vec![0.0; n * m * q];
                // one output row per (batch, i)
                par::for_each_row(&mut data, q, |row, out| {
                    let (b, i) = (row / m, row % m);
                    let a_row = &self.data[b * m * p + i * p..b * m * p + (i + 1) * p];
                    let b_mat = &other.data[b * p * q..(b + 1) * p * q];
                    gemm_row(a_row, b_mat, q, out)
                });
                Ok(Self {
                    shape: vec![n, m, q],
                    data,
                })
            }
            _ => dim_err(format!(
                "matmul needs rank 2 or 3 operands, got {:?} x {:?}",
                self.shape, other.shape
            )),
        }
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return dim_err("concat axis out of range");
        }
        for p in parts {
            if p.rank() != rank
                || p.shape
                    .iter()
                    .enumerate()
                    .any(|(d, &s)| d != axis && s != first.shape[d])
            {
                return dim_err(format!("concat shape {:?} vs {:?}", p.shape, first.shape));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Self { shape, data })
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return dim_err(format!(
                "slice {}..{} on axis {} of {:?}",
                start,
                start + len,
                axis,
                self.shape
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }
}

fn gemm_row(a_row: &[f64], b: &[f64], q: usize, out: &mut [f64]) {
    for (k, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let b_row = &b[k * q..(k + 1) * q];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

/// Broadcast result shape, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r {
            a[i + a.len() - r]
        } else {
            1
        };
        let db = if i + b.len() >= r {
            b[i + b.len() - r]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` aligned to the axes of `target`, zero on broadcast axes.
fn aligned_strides(src: &[usize], target: &[usize]) -> Vec<usize> {
    let r = target.len();
    let off = r - src.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + off] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}
