use std::fmt;
use std::str::FromStr;

use serde_json::json;

use crate::error::{contract, Error, Result};
use crate::evalmetrics::{
    cs_score, euclid, faithfulness, global_robustness, knn_gain, robustness_max_sensitivity,
    rule_similarity, same_label_neighbors, triplet_accuracy, MetricReport, KNN_K, K_MAX,
    N_TRIPLETS,
};
use crate::explain::{Explanation, ExplanationKind, Payload};
use crate::geometry::{cosine_distance, input_distance, FeatureSchema};

use super::blackbox::BlackBoxOutputs;
use super::model::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMetric {
    KnnGain,
    TripletFeature,
    TripletDecision,
    Robustness,
    Faithfulness,
    GlobalRobustness,
}

impl EvalMetric {
    pub const ALL: [EvalMetric; 6] = [
        EvalMetric::KnnGain,
        EvalMetric::TripletFeature,
        EvalMetric::TripletDecision,
        EvalMetric::Robustness,
        EvalMetric::Faithfulness,
        EvalMetric::GlobalRobustness,
    ];

    pub fn needs_explanations(self) -> bool {
        matches!(
            self,
            EvalMetric::Robustness | EvalMetric::Faithfulness | EvalMetric::GlobalRobustness
        )
    }
}

impl fmt::Display for EvalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMetric::KnnGain => "knn-gain",
            EvalMetric::TripletFeature => "triplet-feature",
            EvalMetric::TripletDecision => "triplet-decision",
            EvalMetric::Robustness => "robustness",
            EvalMetric::Faithfulness => "faithfulness",
            EvalMetric::GlobalRobustness => "global-robustness",
        })
    }
}

impl FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMetric::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .map_or_else(|| contract(format!("unknown metric {s:?}")), Ok)
    }
}

/// Rows to evaluate on, with their black-box outputs.
pub struct EvalData<'a> {
    pub x: &'a [Vec<f64>],
    pub bb: &'a BlackBoxOutputs,
    pub schema: &'a FeatureSchema,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub kind: ExplanationKind,
    pub seed: u64,
    pub k: usize,
    pub k_max: usize,
    pub n_triplets: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kind: ExplanationKind::Importance,
            seed: 0,
            k: KNN_K,
            k_max: K_MAX,
            n_triplets: N_TRIPLETS,
        }
    }
}

fn explanation_similarity(a: &Explanation, b: &Explanation) -> f64 {
    match (&a.payload, &b.payload) {
        (Payload::Importance(p), Payload::Importance(q)) => cs_score(p, q),
        _ => match (a.rule(), b.rule()) {
            (Some(r), Some(s)) => rule_similarity(r, s).unwrap_or(0.0),
            _ => 0.0,
        },
    }
}

fn dense_distances<F: Fn(usize, usize) -> f64 + Sync>(n: usize, f: F) -> Vec<f64> {
    let rows = crate::par::map_range(n, |i| (0..n).map(|j| f(i, j)).collect::<Vec<f64>>());
    rows.concat()
}

pub fn evaluate(
    pipeline: &Pipeline,
    data: &EvalData<'_>,
    metric: EvalMetric,
    opt: &EvalOptions,
) -> Result<MetricReport> {
    let n = data.x.len();
    if data.bb.labels.len() != n {
        return contract("evaluation rows and black-box outputs differ in count");
    }
    let z = pipeline.encode(data.x)?;
    let dx = dense_distances(n, |i, j| {
        input_distance(&data.x[i], &data.x[j], data.schema).unwrap_or(f64::NAN)
    });
    let config = json!({
        "n": n,
        "kind": opt.kind.to_string(),
        "seed": opt.seed,
        "k": opt.k,
        "k_max": opt.k_max,
        "n_triplets": opt.n_triplets,
    });
    let name = metric.to_string();
    let labels = &data.bb.labels;
    match metric {
        EvalMetric::KnnGain => {
            let g = knn_gain(
                n,
                labels,
                opt.k,
                |i, j| dx[i * n + j],
                |i, j| cosine_distance(&z[i], &z[j]),
            )?;
            Ok(MetricReport::new(name, config, vec![g]))
        }
        EvalMetric::TripletFeature => {
            let a = triplet_accuracy(
                n,
                |i, j| euclid(&data.x[i], &data.x[j]),
                |i, j| euclid(&z[i], &z[j]),
                opt.n_triplets,
                opt.seed,
            )?;
            Ok(MetricReport::new(name, config, vec![a]))
        }
        EvalMetric::TripletDecision => {
            let p = &data.bb.probs;
            let a = triplet_accuracy(
                n,
                |i, j| euclid(&p[i], &p[j]),
                |i, j| euclid(&z[i], &z[j]),
                opt.n_triplets,
                opt.seed,
            )?;
            Ok(MetricReport::new(name, config, vec![a]))
        }
        EvalMetric::Robustness | EvalMetric::Faithfulness | EvalMetric::GlobalRobustness => {
            let ex = pipeline.explainer();
            let results = ex.explain_all(data.x, labels, opt.kind, pipeline.file.target_class);
            let ok: Vec<usize> = (0..n).filter(|&i| results[i].is_ok()).collect();
            let expl: Vec<&Explanation> = ok
                .iter()
                .filter_map(|&i| results[i].as_ref().ok())
                .collect();
            let m = ok.len();
            let sim = |a: usize, b: usize| explanation_similarity(expl[a], expl[b]);
            let sub_labels: Vec<usize> = ok.iter().map(|&i| labels[i]).collect();
            let sub_dx = |a: usize, b: usize| dx[ok[a] * n + ok[b]];
            let mut config = config;
            config["n_failed"] = json!(n - m);
            match metric {
                EvalMetric::Robustness => {
                    let nb = same_label_neighbors(m, &sub_labels, opt.k_max, sub_dx);
                    let scores = robustness_max_sensitivity(&nb, opt.k_max, sim);
                    config["n_excluded"] = json!(scores.iter().filter(|s| s.is_none()).count());
                    config["n_truncated"] =
                        json!(scores.iter().flatten().filter(|s| s.truncated).count());
                    let v = scores.iter().flatten().map(|s| s.score).collect();
                    Ok(MetricReport::new(name, config, v))
                }
                EvalMetric::Faithfulness => {
                    let outs: Vec<Vec<f64>> =
                        ok.iter().map(|&i| data.bb.probs[i].clone()).collect();
                    let c = faithfulness(&outs, sim)?;
                    config["degenerate"] = json!(c.degenerate);
                    Ok(MetricReport::new(name, config, vec![c.value]))
                }
                _ => {
                    let c = global_robustness(&sub_labels, sub_dx, sim)?;
                    config["degenerate"] = json!(c.degenerate);
                    Ok(MetricReport::new(name, config, vec![c.value]))
                }
            }
        }
    }
}
