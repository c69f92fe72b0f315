//! Transparent synthetic classifiers with known explanations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::explain::AxisRule;
use crate::surrogate::{sigmoid, TreeNode, TreeSurrogate};

/// Features `0..t` are informative, `t..t+u` are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub t: usize,
    pub u: usize,
    pub n_instances: usize,
    pub n_classifiers: usize,
    pub seed: u64,
}

/// Total feature counts of the standard grid.
pub const STANDARD_M: [usize; 5] = [4, 8, 16, 32, 64];

impl SyntheticConfig {
    /// Grid entry for `m` features, with at most 16 informative.
    pub fn standard(m: usize, seed: u64) -> Self {
        let t = m.min(16);
        Self {
            t,
            u: m - t,
            n_instances: 10_240,
            n_classifiers: 5,
            seed,
        }
    }

    pub fn m(&self) -> usize {
        self.t + self.u
    }

    fn check(&self) -> Result<()> {
        if self.t == 0 {
            return contract("synthetic data needs at least one informative feature");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Rule,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Rule => "rule",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "rule" => Ok(Family::Rule),
            other => contract(format!("unknown classifier family {other:?}")),
        }
    }
}

/// Independent RNG stream per (seed, purpose, index).
fn stream(seed: u64, purpose: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 32 | index as u64);
    rng
}

const DATA_STREAM: u64 = 1;
const LINEAR_STREAM: u64 = 2;
const RULE_STREAM: u64 = 3;

/// `n_instances x m` standard-normal matrix for classifier `index`.
pub fn gen_dataset(cfg: &SyntheticConfig, index: usize) -> Result<Vec<Vec<f64>>> {
    cfg.check()?;
    let mut rng = stream(cfg.seed, DATA_STREAM, index);
    Ok((0..cfg.n_instances)
        .map(|_| (0..cfg.m()).map(|_| rng.sample(StandardNormal)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransparentLinear {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl TransparentLinear {
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

pub fn make_linear(cfg: &SyntheticConfig, index: usize) -> Result<TransparentLinear> {
    check_index(cfg, index)?;
    let mut rng = stream(cfg.seed, LINEAR_STREAM, index);
    let weights = (0..cfg.m())
        .map(|j| {
            if j < cfg.t {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(TransparentLinear {
        weights,
        intercept: 0.0,
    })
}

/// Importance is the coefficient vector, independent of `x`.
pub fn gt_importance(clf: &TransparentLinear) -> Vec<f64> {
    clf.weights.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransparentRuleBased {
    pub tree: TreeSurrogate,
}

fn check_index(cfg: &SyntheticConfig, index: usize) -> Result<()> {
    cfg.check()?;
    if index >= cfg.n_classifiers {
        return contract(format!("classifier index {index} >= {}", cfg.n_classifiers));
    }
    Ok(())
}

/// Depth `ceil(log2 t)`, between 1 and 4.
pub fn rule_depth(t: usize) -> usize {
    let mut d = 0;
    while (1usize << d) < t {
        d += 1;
    }
    d.clamp(1, 4)
}

/// Full tree of depth `rule_depth(t)` over informative features with
/// thresholds in (-1, 1); leaves alternate labels left to right.
pub fn make_rulebased(cfg: &SyntheticConfig, index: usize) -> Result<TransparentRuleBased> {
    check_index(cfg, index)?;
    let mut rng = stream(cfg.seed, RULE_STREAM, index);
    let depth = rule_depth(cfg.t);
    let mut nodes = Vec::new();
    let mut leaf_no = 0;
    build(&mut nodes, &mut rng, cfg.t, depth, &mut leaf_no);
    Ok(TransparentRuleBased {
        tree: TreeSurrogate {
            nodes,
            n_features: cfg.m(),
            n_classes: 2,
            max_depth: depth,
            min_leaf: 1,
        },
    })
}

fn build(
    nodes: &mut Vec<TreeNode>,
    rng: &mut ChaCha8Rng,
    t: usize,
    depth: usize,
    leaf_no: &mut usize,
) -> usize {
    let id = nodes.len();
    if depth == 0 {
        nodes.push(TreeNode::Leaf {
            label: *leaf_no % 2,
            counts: vec![],
        });
        *leaf_no += 1;
        return id;
    }
    let feature = rng.random_range(0..t);
    let threshold = rng.random_range(-1.0..1.0);
    nodes.push(TreeNode::Leaf {
        label: 0,
        counts: vec![],
    });
    let left = build(nodes, rng, t, depth - 1, leaf_no);
    let right = build(nodes, rng, t, depth - 1, leaf_no);
    nodes[id] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

impl TransparentRuleBased {
    pub fn label(&self, x: &[f64]) -> usize {
        self.tree.predict(x)
    }
}

/// Root-to-leaf box of the leaf reached by `x`.
pub fn gt_rule(clf: &TransparentRuleBased, x: &[f64]) -> AxisRule {
    let r = clf.tree.latent_rule(x);
    AxisRule {
        lower: r.lower,
        upper: r.upper,
        class: clf.label(x),
    }
}

/// Either family, as a black-box producing class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transparent {
    Linear(TransparentLinear),
    Rule(TransparentRuleBased),
}

impl Transparent {
    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Transparent::Linear(c) => {
                let p = c.prob(x);
                vec![1.0 - p, p]
            }
            Transparent::Rule(c) => {
                if c.label(x) == 1 {
                    vec![0.0, 1.0]
                } else {
                    vec![1.0, 0.0]
                }
            }
        }
    }

    /// Class 1 when its probability reaches one half.
    pub fn label(&self, x: &[f64]) -> usize {
        usize::from(self.proba(x)[1] >= 0.5)
    }
}

/// Everything needed to regenerate one classifier and its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub m: usize,
    pub t: usize,
    pub u: usize,
    pub family: Family,
    pub seed: u64,
    pub classifier_index: usize,
    #[serde(default = "default_instances")]
    pub n_instances: usize,
}

fn default_instances() -> usize {
    10_240
}

impl SyntheticManifest {
    pub fn config(&self) -> Result<SyntheticConfig> {
        if self.t + self.u != self.m {
            return contract(format!("manifest m={} but t+u={}", self.m, self.t + self.u));
        }
        Ok(SyntheticConfig {
            t: self.t,
            u: self.u,
            n_instances: self.n_instances,
            n_classifiers: self.classifier_index + 1,
            seed: self.seed,
        })
    }

    pub fn classifier(&self) -> Result<Transparent> {
        let cfg = self.config()?;
        Ok(match self.family {
            Family::Linear => Transparent::Linear(make_linear(&cfg, self.classifier_index)?),
            Family::Rule => Transparent::Rule(make_rulebased(&cfg, self.classifier_index)?),
        })
    }

    pub fn dataset(&self) -> Result<Vec<Vec<f64>>> {
        gen_dataset(&self.config()?, self.classifier_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(t: usize, u: usize, n: usize) -> SyntheticConfig {
        SyntheticConfig {
            t,
            u,
            n_instances: n,
            n_classifiers: 5,
            seed: 42,
        }
    }

    #[test]
    fn standard_grid() {
        for m in STANDARD_M {
            let c = SyntheticConfig::standard(m, 0);
            assert_eq!(c.m(), m);
            assert_eq!(c.t, m.min(16));
        }
    }

    #[test]
    fn dataset_is_seeded_standard_normal() {
        let c = cfg(4, 2, 2048);
        let a = gen_dataset(&c, 0).unwrap();
        assert_eq!(a, gen_dataset(&c, 0).unwrap());
        assert_ne!(a, gen_dataset(&c, 1).unwrap());
        assert_eq!(a.len(), 2048);
        for j in 0..6 {
            let mean = a.iter().map(|r| r[j]).sum::<f64>() / 2048.0;
            let var = a.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 2047.0;
            assert!(mean.abs() < 0.1, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 0.1, "std {}", var.sqrt());
        }
    }

    #[test]
    fn linear_weights_respect_informative_split() {
        let c = cfg(3, 2, 10);
        let clf = make_linear(&c, 2).unwrap();
        assert_eq!(&clf.weights[3..], &[0.0, 0.0]);
        assert!(clf.weights[..3].iter().all(|w| *w != 0.0 && w.abs() < 1.0));
        assert_eq!(gt_importance(&clf), clf.weights);
        let dense = make_linear(&cfg(4, 0, 10), 0).unwrap();
        assert!(dense.weights.iter().all(|w| *w != 0.0));
        assert!(make_linear(&c, 5).is_err());
    }

    #[test]
    fn linear_prediction_matches_dot_product() {
        let c = cfg(4, 1, 50);
        let clf = make_linear(&c, 0).unwrap();
        for x in gen_dataset(&c, 0).unwrap() {
            let mut s = clf.intercept;
            for j in 0..5 {
                s += clf.weights[j] * x[j];
            }
            assert!((clf.prob(&x) - 1.0 / (1.0 + (-s).exp())).abs() < 1e-12);
            assert_eq!(
                Transparent::Linear(clf.clone()).label(&x),
                usize::from(s >= 0.0)
            );
        }
    }

    #[test]
    fn depth_schedule() {
        assert_eq!(rule_depth(1), 1);
        assert_eq!(rule_depth(2), 1);
        assert_eq!(rule_depth(4), 2);
        assert_eq!(rule_depth(5), 3);
        assert_eq!(rule_depth(16), 4);
        assert_eq!(rule_depth(64), 4);
    }

    #[test]
    fn depth_one_tree_is_a_single_threshold() {
        let clf = make_rulebased(&cfg(2, 3, 10), 0).unwrap();
        assert_eq!(clf.tree.nodes.len(), 3);
        let TreeNode::Split {
            feature, threshold, ..
        } = clf.tree.nodes[0]
        else {
            panic!()
        };
        assert!(feature < 2);
        assert_eq!(
            clf.label(&[threshold - 0.1, threshold - 0.1, 0.0, 0.0, 0.0]),
            0
        );
        let mut x = vec![0.0; 5];
        x[feature] = threshold + 0.1;
        assert_eq!(clf.label(&x), 1);
    }

    fn replay(nodes: &[TreeNode], x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &nodes[id] {
                TreeNode::Leaf { label, .. } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    #[test]
    fn rule_trees_use_informative_features_and_both_labels() {
        let c = cfg(4, 4, 500);
        for i in 0..5 {
            let clf = make_rulebased(&c, i).unwrap();
            let mut labels = vec![];
            for node in &clf.tree.nodes {
                match node {
                    TreeNode::Split { feature, .. } => assert!(*feature < 4),
                    TreeNode::Leaf { label, .. } => labels.push(*label),
                }
            }
            assert!(labels.contains(&0) && labels.contains(&1));
            for x in gen_dataset(&c, i).unwrap() {
                assert_eq!(clf.label(&x), replay(&clf.tree.nodes, &x));
                let r = gt_rule(&clf, &x);
                assert!(r.contains(&x));
                assert!(r.lower[4..].iter().all(|v| v.is_infinite()));
            }
        }
    }

    #[test]
    fn points_inside_a_rule_box_share_the_label() {
        let c = cfg(4, 0, 20);
        let clf = make_rulebased(&c, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for x in gen_dataset(&c, 1).unwrap() {
            let r = gt_rule(&clf, &x);
            for _ in 0..50 {
                let p: Vec<f64> = (0..4)
                    .map(|j| {
                        let lo = r.lower[j].max(x[j] - 3.0);
                        let hi = r.upper[j].min(x[j] + 3.0);
                        rng.random_range(lo..=hi)
                    })
                    .collect();
                if (0..4).all(|j| p[j] > r.lower[j]) {
                    assert_eq!(clf.label(&p), r.class);
                }
            }
        }
    }

    #[test]
    fn single_leaf_tree_gives_vacuous_rule() {
        let clf = TransparentRuleBased {
            tree: TreeSurrogate {
                nodes: vec![TreeNode::Leaf {
                    label: 1,
                    counts: vec![],
                }],
                n_features: 3,
                n_classes: 2,
                max_depth: 0,
                min_leaf: 1,
            },
        };
        assert_eq!(gt_rule(&clf, &[0.0, 1.0, 2.0]), AxisRule::unbounded(3, 1));
    }

    #[test]
    fn manifest_regenerates_bit_identically() {
        let man = SyntheticManifest {
            m: 4,
            t: 4,
            u: 0,
            family: Family::Linear,
            seed: 7,
            classifier_index: 3,
            n_instances: 100,
        };
        let s = serde_json::to_string(&man).unwrap();
        let back: SyntheticManifest = serde_json::from_str(&s).unwrap();
        assert_eq!(back.classifier().unwrap(), man.classifier().unwrap());
        assert_eq!(back.dataset().unwrap(), man.dataset().unwrap());
        let bad = SyntheticManifest { u: 1, ..man };
        assert!(bad.config().is_err());
    }
}
