use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::geometry::cosine_similarity;
use crate::metaenc::MetaEncoder;
use crate::surrogate::Surrogate;

/// Training instances with their latent codes and both labels. Read-only
/// once built; searched by exact linear scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStore {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub blackbox_label: Vec<usize>,
    pub surrogate_label: Vec<usize>,
}

impl LatentStore {
    pub fn build(
        encoder: &MetaEncoder,
        surrogate: &Surrogate,
        x: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<Self> {
        if x.len() != labels.len() {
            return dim_err("store rows and labels differ in length");
        }
        let z = crate::par::map_slice(x, |row| encoder.encode(row))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let surrogate_label = z.iter().map(|zi| surrogate.predict(zi)).collect();
        Ok(Self {
            x: x.to_vec(),
            z,
            blackbox_label: labels.to_vec(),
            surrogate_label,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Surrogate and black-box agree on entry `i`.
    pub fn is_valid(&self, i: usize) -> bool {
        self.blackbox_label[i] == self.surrogate_label[i]
    }

    /// Most cosine-similar valid entry whose black-box label is `label`.
    /// Ties go to the lower index.
    pub fn nearest_valid(&self, z: &[f64], label: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.len() {
            if !self.is_valid(i) || self.blackbox_label[i] != label {
                continue;
            }
            let s = cosine_similarity(z, &self.z[i]);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }
}
