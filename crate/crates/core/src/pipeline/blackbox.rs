use std::collections::HashMap;
use std::path::Path;

use crate::config::TOL;
use crate::error::{Error, Result};
use crate::surrogate::argmax;
use crate::synthbench::Transparent;

/// Class probabilities of the explained model, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxOutputs {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

/// Binary outputs use the 0.5 threshold on class 1; more classes use argmax.
pub fn hard_label(p: &[f64]) -> usize {
    if p.len() == 2 {
        usize::from(p[1] >= 0.5)
    } else {
        argmax(p)
    }
}

impl BlackBoxOutputs {
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        let c = probs.first().map_or(2, Vec::len);
        if c < 2 {
            return Err(Error::Data(
                "black-box outputs need at least two classes".into(),
            ));
        }
        for (i, p) in probs.iter().enumerate() {
            let s: f64 = p.iter().sum();
            if p.len() != c
                || p.iter().any(|v| !(0.0..=1.0).contains(v))
                || (s - 1.0).abs() > TOL.prob_row_tol
            {
                return Err(Error::Data(format!(
                    "row {i}: {p:?} is not a probability vector"
                )));
            }
        }
        let labels = probs.iter().map(|p| hard_label(p)).collect();
        Ok(Self {
            probs,
            labels,
            n_classes: c,
        })
    }

    pub fn from_transparent(clf: &Transparent, x: &[Vec<f64>]) -> Result<Self> {
        Self::from_probs(crate::par::map_slice(x, |r| clf.proba(r)))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            probs: idx.iter().map(|&i| self.probs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Class explained by default: class 1 for binary outputs, otherwise the
    /// most frequent label (lowest index on ties).
    pub fn default_target(&self) -> usize {
        if self.n_classes == 2 {
            return 1;
        }
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }
}

/// Reads a predictions CSV whose first column is the row id and whose other
/// columns are class probabilities, reordered to match `row_ids`.
pub fn load_preds(path: &Path, row_ids: &[String]) -> Result<BlackBoxOutputs> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let p = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("predictions row {r}: {v:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if by_id.insert(id.clone(), p).is_some() {
            return Err(Error::Data(format!(
                "duplicate row id {id:?} in predictions"
            )));
        }
    }
    if by_id.len() != row_ids.len() {
        return Err(Error::Data(format!(
            "predictions have {} rows, data has {}",
            by_id.len(),
            row_ids.len()
        )));
    }
    let probs = row_ids
        .iter()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| Error::Data(format!("no prediction for row id {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    BlackBoxOutputs::from_probs(probs)
}
