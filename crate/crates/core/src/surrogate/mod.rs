//! Global interpretable models fitted on latent codes.

mod logistic;
mod tree;

use serde::{Deserialize, Serialize};

pub use logistic::{argmax, objective, sigmoid, BinaryLogistic, LogisticConfig, LogisticSurrogate};
pub use tree::{LatentRule, TreeNode, TreeSurrogate};

/// Depths tried when tuning the tree surrogate.
pub const TREE_DEPTHS: [usize; 4] = [3, 4, 5, 6];
pub const TREE_MIN_LEAF: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surrogate {
    Logistic(LogisticSurrogate),
    Tree(TreeSurrogate),
}

impl Surrogate {
    pub fn predict(&self, z: &[f64]) -> usize {
        match self {
            Surrogate::Logistic(m) => m.predict(z),
            Surrogate::Tree(t) => t.predict(z),
        }
    }
}
