//! Explanation generator: importance pullback, latent-to-input rule
//! conversion, fidelity refinement and counterfactual rules.

mod counterfactual;
mod refine;
mod rules;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diffcore::Tensor;
use crate::error::{contract, Error, Result};
use crate::metaenc::MetaEncoder;
use crate::surrogate::Surrogate;

pub use counterfactual::{
    count_changes, counterfactual, select_counterfactual, CounterfactualExplanation,
};
pub use refine::{
    grid_search, importance_pullback, refine_fidelity, refined_importance, refined_rule,
    GridChoice, RefinementResult, REFINE_GRID,
};
pub use rules::{bounds, latent_to_oblique, oblique_to_axis, AxisRule, ObliqueRule};
pub use store::LatentStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Importance,
    Rule,
    Counterfactual,
}

impl fmt::Display for ExplanationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExplanationKind::Importance => "importance",
            ExplanationKind::Rule => "rule",
            ExplanationKind::Counterfactual => "counterfactual",
        })
    }
}

impl FromStr for ExplanationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "importance" => Ok(ExplanationKind::Importance),
            "rule" => Ok(ExplanationKind::Rule),
            "counterfactual" => Ok(ExplanationKind::Counterfactual),
            other => contract(format!("unknown explanation kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    pub gamma_w: f64,
    pub gamma_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Importance(Vec<f64>),
    Rule(AxisRule),
    Counterfactual(CounterfactualExplanation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub class: usize,
    /// Surrogate agrees with the black-box on the latent actually explained.
    pub valid: bool,
    pub refinement: Option<Gammas>,
    pub payload: Payload,
    /// Transform emitted by the encoder for the instance.
    pub w: Tensor,
    /// Latent the explanation was read from (refined when refinement ran).
    pub z: Vec<f64>,
    /// Why refinement was not possible, for invalid explanations.
    pub note: Option<String>,
}

impl Explanation {
    pub fn importance(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Importance(p) => Some(p),
            _ => None,
        }
    }

    pub fn rule(&self) -> Option<&AxisRule> {
        match &self.payload {
            Payload::Rule(r) => Some(r),
            Payload::Counterfactual(c) => Some(&c.rule),
            Payload::Importance(_) => None,
        }
    }

    /// One JSON-lines record.
    pub fn to_json(&self, instance_id: &str) -> Value {
        let mut v = json!({
            "instance_id": instance_id,
            "kind": self.kind.to_string(),
            "class": self.class,
            "valid": self.valid,
            "refinement": self.refinement.map(|g| json!({"gamma_w": g.gamma_w, "gamma_x": g.gamma_x})),
        });
        let rule_json = |r: &AxisRule| json!({"lower": bounds::to_values(&r.lower), "upper": bounds::to_values(&r.upper), "class": r.class});
        match &self.payload {
            Payload::Importance(p) => v["psi"] = json!(p),
            Payload::Rule(r) => v["rule"] = rule_json(r),
            Payload::Counterfactual(c) => {
                v["counterfactual"] = json!({
                    "rule": rule_json(&c.rule),
                    "example_row": c.example_row,
                    "n_changes": c.n_changes,
                })
            }
        }
        if let Some(n) = &self.note {
            v["note"] = json!(n);
        }
        v
    }
}

/// Frozen encoder, surrogate and store.
#[derive(Debug, Clone, Copy)]
pub struct Explainer<'a> {
    pub encoder: &'a MetaEncoder,
    pub surrogate: &'a Surrogate,
    pub store: &'a LatentStore,
    pub grid: usize,
}

impl<'a> Explainer<'a> {
    pub fn new(encoder: &'a MetaEncoder, surrogate: &'a Surrogate, store: &'a LatentStore) -> Self {
        Self {
            encoder,
            surrogate,
            store,
            grid: REFINE_GRID,
        }
    }

    /// Explains `x` whose black-box label is `b_label`. Importance vectors
    /// are expressed for `target_class`; rules for the black-box label.
    pub fn explain(
        &self,
        x: &[f64],
        b_label: usize,
        kind: ExplanationKind,
        target_class: usize,
    ) -> Result<Explanation> {
        let w = self.encoder.sparse_transform(x)?;
        let z = crate::metaenc::apply_transform(&w, x);
        let agrees = self.surrogate.predict(&z) == b_label;
        let (refinement, note) = if agrees {
            (None, None)
        } else {
            match refine_fidelity(
                x,
                &z,
                &w,
                self.encoder,
                self.surrogate,
                b_label,
                self.store,
                self.grid,
            ) {
                Ok(r) => (Some(r), None),
                Err(e @ Error::NoValidNeighbor { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            }
        };
        let valid = agrees || refinement.is_some();
        let z_used = refinement
            .as_ref()
            .map_or_else(|| z.clone(), |r| r.z_star.clone());
        let (class, payload) = match kind {
            ExplanationKind::Importance => {
                let Surrogate::Logistic(lr) = self.surrogate else {
                    return contract("importance explanations need a logistic surrogate");
                };
                let beta = lr.coef_for(target_class);
                let psi = match &refinement {
                    Some(r) => refined_importance(r, &beta)?,
                    None => importance_pullback(&w, &beta)?,
                };
                (target_class, Payload::Importance(psi))
            }
            ExplanationKind::Rule => {
                let Surrogate::Tree(tree) = self.surrogate else {
                    return contract("rule explanations need a tree surrogate");
                };
                let rule_z = tree.latent_rule(&z_used);
                let class = tree.predict(&z_used);
                let rule = match &refinement {
                    Some(r) => refined_rule(r, &rule_z, x, class)?,
                    None => oblique_to_axis(&rule_z, &w, x, &z, class)?,
                };
                (class, Payload::Rule(rule))
            }
            ExplanationKind::Counterfactual => {
                let Surrogate::Tree(tree) = self.surrogate else {
                    return contract("counterfactual explanations need a tree surrogate");
                };
                let pred = tree.predict(&z_used);
                let cf = counterfactual(&z_used, pred, tree, self.store, self.encoder)?;
                (cf.rule.class, Payload::Counterfactual(cf))
            }
        };
        Ok(Explanation {
            kind,
            class,
            valid,
            refinement: refinement.as_ref().map(|r| Gammas {
                gamma_w: r.gamma_w,
                gamma_x: r.gamma_x,
            }),
            payload,
            w,
            z: z_used,
            note,
        })
    }

    /// Explains every row; results keep row order.
    pub fn explain_all(
        &self,
        x: &[Vec<f64>],
        b_labels: &[usize],
        kind: ExplanationKind,
        target_class: usize,
    ) -> Vec<Result<Explanation>> {
        crate::par::map_range(x.len(), |i| {
            self.explain(&x[i], b_labels[i], kind, target_class)
        })
    }
}
