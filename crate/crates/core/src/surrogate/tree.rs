use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `z[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        label: usize,
        counts: Vec<usize>,
    },
}

/// Axis-parallel CART classifier over latent features. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSurrogate {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Interval constraints on latent features: `lower[r] < z[r] <= upper[r]`,
/// with infinite bounds where a feature is unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRule {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LatentRule {
    pub fn unbounded(k: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| l < v && v <= u)
    }

    /// Same rule with both bounds of dim `r` moved by `-shift[r]`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(shift).map(|(l, s)| l - s).collect(),
            upper: self.upper.iter().zip(shift).map(|(u, s)| u - s).collect(),
        }
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    z: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best `(feature, threshold, weighted child impurity)` over midpoints of
    /// consecutive distinct values that leave `min_leaf` rows on each side.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let k = self.z.first().map_or(0, Vec::len);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..k {
            sorted.sort_by(|&a, &b| self.z[a][f].total_cmp(&self.z[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            let mut right = self.counts(idx);
            for pos in 0..n - 1 {
                let i = sorted[pos];
                left[self.y[i]] += 1;
                right[self.y[i]] -= 1;
                let nl = pos + 1;
                let (a, b) = (self.z[i][f], self.z[sorted[pos + 1]][f]);
                if a == b || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let imp = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                if best.is_none_or(|(_, _, bi)| imp < bi) {
                    let mut thr = a + (b - a) / 2.0;
                    // keep a strictly inside [a, b) when the midpoint rounds up
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((f, thr, imp));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let here = gini(&counts, idx.len());
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: majority(&counts),
            counts: counts.clone(),
        });
        if depth >= self.max_depth || here == 0.0 || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold, imp)) = self.best_split(&idx) else {
            return id;
        };
        if here - imp <= 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.z[i][feature] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl TreeSurrogate {
    /// Greedy CART with Gini impurity.
    pub fn fit(
        z: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        max_depth: usize,
        min_leaf: usize,
    ) -> Result<Self> {
        if z.len() != labels.len() {
            return dim_err("latent rows and labels differ in length");
        }
        if z.is_empty() {
            return dim_err("tree needs at least one row");
        }
        let n_classes = n_classes.max(labels.iter().max().map_or(1, |m| m + 1));
        let mut b = Builder {
            z,
            y: labels,
            n_classes,
            max_depth,
            min_leaf: min_leaf.max(1),
            nodes: Vec::new(),
        };
        b.build((0..z.len()).collect(), 0);
        Ok(Self {
            nodes: b.nodes,
            n_features: z[0].len(),
            n_classes,
            max_depth,
            min_leaf,
        })
    }

    /// Picks the depth from `depths` with the best accuracy on a seeded 20%
    /// hold-out, then refits on all rows. Ties favour the shallower tree.
    pub fn fit_tuned(
        z: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        depths: &[usize],
        min_leaf: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = z.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = n / 5;
        let mut best_depth = depths.first().copied().unwrap_or(3);
        if n_val > 0 && depths.len() > 1 {
            let (val, fit) = order.split_at(n_val);
            let zf: Vec<Vec<f64>> = fit.iter().map(|&i| z[i].clone()).collect();
            let yf: Vec<usize> = fit.iter().map(|&i| labels[i]).collect();
            let mut best_acc = -1.0;
            for &d in depths {
                let t = Self::fit(&zf, &yf, n_classes, d, min_leaf)?;
                let hits = val
                    .iter()
                    .filter(|&&i| t.predict(&z[i]) == labels[i])
                    .count();
                let acc = hits as f64 / n_val as f64;
                if acc > best_acc {
                    best_acc = acc;
                    best_depth = d;
                }
            }
        }
        Self::fit(z, labels, n_classes, best_depth, min_leaf)
    }

    /// Index of the leaf reached by `z`.
    pub fn leaf_of(&self, z: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { .. } => return id,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if z[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaf_label(&self, leaf: usize) -> usize {
        match &self.nodes[leaf] {
            TreeNode::Leaf { label, .. } => *label,
            TreeNode::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn predict(&self, z: &[f64]) -> usize {
        self.leaf_label(self.leaf_of(z))
    }

    /// Rule of the root-to-leaf path followed by `z`.
    pub fn latent_rule(&self, z: &[f64]) -> LatentRule {
        self.rule_of_leaf(self.leaf_of(z))
    }

    /// Conjunction of the split conditions leading to `leaf`.
    pub fn rule_of_leaf(&self, leaf: usize) -> LatentRule {
        let mut parent = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split { left, right, .. } = node {
                parent[*left] = Some((id, true));
                parent[*right] = Some((id, false));
            }
        }
        let mut rule = LatentRule::unbounded(self.n_features);
        let mut cur = leaf;
        while let Some((p, went_left)) = parent[cur] {
            if let TreeNode::Split {
                feature, threshold, ..
            } = self.nodes[p]
            {
                if went_left {
                    rule.upper[feature] = rule.upper[feature].min(threshold);
                } else {
                    rule.lower[feature] = rule.lower[feature].max(threshold);
                }
            }
            cur = p;
        }
        rule
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], TreeNode::Leaf { .. }))
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &TreeSurrogate, id: usize) -> usize {
            match &t.nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + rec(t, *left).max(rec(t, *right)),
            }
        }
        rec(self, 0)
    }
}
