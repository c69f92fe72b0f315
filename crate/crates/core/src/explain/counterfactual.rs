use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cosine_similarity;
use crate::metaenc::MetaEncoder;
use crate::surrogate::{LatentRule, TreeSurrogate};

use super::rules::{oblique_to_axis, AxisRule};
use super::store::LatentStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualExplanation {
    pub rule: AxisRule,
    /// Store index of the counter-example.
    pub example_row: usize,
    pub n_changes: usize,
}

/// Latent dims whose `(lower, upper)` pair differs, compared exactly.
pub fn count_changes(a: &LatentRule, b: &LatentRule) -> usize {
    (0..a.lower.len())
        .filter(|&r| a.lower[r] != b.lower[r] || a.upper[r] != b.upper[r])
        .count()
}

/// Picks the store entry with a different surrogate prediction whose leaf
/// rule needs the fewest changes, preferring higher latent similarity, then
/// lower index. Returns `(index, n_changes)`.
pub fn select_counterfactual(
    z: &[f64],
    pred: usize,
    tree: &TreeSurrogate,
    store: &LatentStore,
) -> Result<(usize, usize)> {
    let own = tree.latent_rule(z);
    let mut leaf_changes: HashMap<usize, usize> = HashMap::new();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..store.len() {
        if store.surrogate_label[i] == pred {
            continue;
        }
        let leaf = tree.leaf_of(&store.z[i]);
        let changes = *leaf_changes
            .entry(leaf)
            .or_insert_with(|| count_changes(&own, &tree.rule_of_leaf(leaf)));
        let sim = cosine_similarity(z, &store.z[i]);
        let better = match best {
            None => true,
            Some((_, c, s)) => changes < c || (changes == c && sim > s),
        };
        if better {
            best = Some((i, changes, sim));
        }
    }
    best.map(|(i, c, _)| (i, c))
        .ok_or(Error::NoDifferingInstance)
}

/// Counterfactual rule for the latent `z` with surrogate prediction `pred`.
/// The selected leaf rule is converted to input space around the
/// counter-example, which satisfies it by construction.
pub fn counterfactual(
    z: &[f64],
    pred: usize,
    tree: &TreeSurrogate,
    store: &LatentStore,
    encoder: &MetaEncoder,
) -> Result<CounterfactualExplanation> {
    let (i, n_changes) = select_counterfactual(z, pred, tree, store)?;
    let (x_c, z_c) = (&store.x[i], &store.z[i]);
    let w_c = encoder.sparse_transform(x_c)?;
    let rule = oblique_to_axis(
        &tree.latent_rule(z_c),
        &w_c,
        x_c,
        z_c,
        store.surrogate_label[i],
    )?;
    Ok(CounterfactualExplanation {
        rule,
        example_row: i,
        n_changes,
    })
}
