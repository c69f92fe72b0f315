use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{contract, Result};

use super::model::MetaEncoder;
use super::train::TrainingConfig;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk form of a trained meta-encoder. Weights are flat row-major arrays
/// in parameter order `[w1, b1, w2, b2, w3, b3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFile {
    pub format_version: u32,
    pub m: usize,
    pub k: usize,
    pub alpha: usize,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub training_config: TrainingConfig,
    pub seed: u64,
}

impl EncoderFile {
    pub fn new(model: &MetaEncoder, cfg: &TrainingConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            m: model.m,
            k: model.k,
            alpha: model.alpha,
            layer_dims: model.layer_dims.clone(),
            weights: model.params.iter().map(|p| p.data().to_vec()).collect(),
            training_config: cfg.clone(),
            seed: cfg.seed,
        }
    }

    pub fn to_model(&self) -> Result<MetaEncoder> {
        if self.format_version != FORMAT_VERSION {
            return contract(format!(
                "unsupported model format version {}",
                self.format_version
            ));
        }
        let d = &self.layer_dims;
        if d.len() != 4 || d[0] != self.m || d[3] != self.m * self.k || self.weights.len() != 6 {
            return contract("layer layout does not match a three-layer meta-encoder");
        }
        let mut params = Vec::with_capacity(6);
        for (l, w) in d.windows(2).enumerate() {
            params.push(Tensor::new(vec![w[0], w[1]], self.weights[2 * l].clone())?);
            params.push(Tensor::new(vec![1, w[1]], self.weights[2 * l + 1].clone())?);
        }
        Ok(MetaEncoder {
            m: self.m,
            k: self.k,
            alpha: self.alpha,
            layer_dims: d.clone(),
            params,
        })
    }
}
