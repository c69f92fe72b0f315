use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{contract, dim_err, Result};
use crate::metaenc::apply_transform;
use crate::surrogate::LatentRule;

/// Per-feature closed intervals `lower[j] <= x[j] <= upper[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRule {
    #[serde(with = "bounds")]
    pub lower: Vec<f64>,
    #[serde(with = "bounds")]
    pub upper: Vec<f64>,
    pub class: usize,
}

impl AxisRule {
    pub fn unbounded(m: usize, class: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
            class,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| l <= v && v <= u)
    }
}

/// Serialises bounds as numbers, with `"inf"` / `"-inf"` for infinities.
pub mod bounds {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    pub fn to_values(v: &[f64]) -> Vec<Value> {
        v.iter()
            .map(|&b| {
                if b == f64::INFINITY {
                    Value::from("inf")
                } else if b == f64::NEG_INFINITY {
                    Value::from("-inf")
                } else {
                    Value::from(b)
                }
            })
            .collect()
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        to_values(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::String(s) if s == "inf" => Ok(f64::INFINITY),
                Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                other => other.as_f64().ok_or_else(|| D::Error::custom("bad bound")),
            })
            .collect()
    }
}

/// Latent intervals attached to the columns of one transform: `x` satisfies
/// the rule iff `W^T x` satisfies the latent rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueRule {
    pub w: Tensor,
    pub latent: LatentRule,
}

impl ObliqueRule {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.latent.contains(&apply_transform(&self.w, x))
    }
}

pub fn latent_to_oblique(rule: &LatentRule, w: &Tensor) -> Result<ObliqueRule> {
    if w.rank() != 2 || w.shape()[1] != rule.lower.len() {
        return dim_err(format!(
            "transform {:?} does not match a rule on {} latent dims",
            w.shape(),
            rule.lower.len()
        ));
    }
    Ok(ObliqueRule {
        w: w.clone(),
        latent: rule.clone(),
    })
}

/// Axis-parallel box around `x` obtained by moving one feature at a time
/// inside the oblique rule: for each latent dim with a nonzero weight the
/// latent interval is divided by that weight (flipping the ends for negative
/// weights) and the tightest bounds are kept.
pub fn oblique_to_axis(
    rule: &LatentRule,
    w: &Tensor,
    x: &[f64],
    z: &[f64],
    class: usize,
) -> Result<AxisRule> {
    let (m, k) = (w.shape()[0], w.shape()[1]);
    if x.len() != m || z.len() != k || rule.lower.len() != k {
        return dim_err("rule conversion operands disagree in size");
    }
    if !rule.contains(z) {
        return contract("latent point violates the rule being converted");
    }
    let mut out = AxisRule::unbounded(m, class);
    for j in 0..m {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for r in 0..k {
            let wjr = w.data()[j * k + r];
            if wjr == 0.0 {
                continue;
            }
            let from_l = (rule.lower[r] - z[r]) / wjr;
            let from_u = (rule.upper[r] - z[r]) / wjr;
            let (cand_lo, cand_hi) = if wjr > 0.0 {
                (from_l, from_u)
            } else {
                (from_u, from_l)
            };
            if cand_lo.is_finite() {
                lo = lo.max(cand_lo);
            }
            if cand_hi.is_finite() {
                hi = hi.min(cand_hi);
            }
        }
        // offsets are <= 0 below and >= 0 above by construction; the clamps
        // only absorb rounding so x always lies inside its own box
        if lo.is_finite() {
            out.lower[j] = (x[j] + lo.min(0.0)).min(x[j]);
        }
        if hi.is_finite() {
            out.upper[j] = (x[j] + hi.max(0.0)).max(x[j]);
        }
    }
    Ok(out)
}
