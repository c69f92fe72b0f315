use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{cplt_score, cs_score, euclid, mad, MetricReport};
use crate::explain::{AxisRule, Explanation, ExplanationKind};
use crate::geometry::FeatureSchema;
use crate::metaenc::{LossWeights, StabilityMode, TrainingConfig};
use crate::surrogate::{
    LogisticConfig, LogisticSurrogate, TreeSurrogate, TREE_DEPTHS, TREE_MIN_LEAF,
};
use crate::synthbench::{
    gen_dataset, gt_importance, gt_rule, make_linear, make_rulebased, Family, SyntheticConfig,
    Transparent,
};

use super::blackbox::BlackBoxOutputs;
use super::data::{split_indices, TEST_FRACTION};
use super::model::{fit_pipeline, SurrogateKind, TrainData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub family: Family,
    pub synthetic: SyntheticConfig,
    pub k: usize,
    pub alpha: Option<usize>,
    pub weights: LossWeights,
    pub stability_mode: StabilityMode,
    pub pretrain_epochs: usize,
    pub ramp_epochs: usize,
    pub finetune_epochs: usize,
    pub split_seed: u64,
}

impl BenchConfig {
    pub fn new(family: Family, m: usize, seed: u64) -> Self {
        Self {
            family,
            synthetic: SyntheticConfig::standard(m, seed),
            k: m.clamp(2, 8),
            alpha: Some(2.min(m)),
            weights: LossWeights::default(),
            stability_mode: StabilityMode::Jacobian,
            pretrain_epochs: 5,
            ramp_epochs: 5,
            finetune_epochs: 20,
            split_seed: seed,
        }
    }

    pub fn training(&self, index: usize) -> TrainingConfig {
        TrainingConfig {
            k: self.k,
            alpha: self.alpha,
            weights: self.weights,
            stability_mode: self.stability_mode,
            pretrain_epochs: self.pretrain_epochs,
            ramp_epochs: self.ramp_epochs,
            finetune_epochs: self.finetune_epochs,
            seed: self.synthetic.seed.wrapping_add(index as u64),
            ..TrainingConfig::default()
        }
    }
}

/// Checks on the explanations of one classifier beyond the correctness
/// scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationAudit {
    pub n_explained: usize,
    pub n_errors: usize,
    pub n_refined: usize,
    /// Instances with no valid same-label training neighbour.
    pub n_without_neighbor: usize,
    /// Instances that have such a neighbour yet whose explained latent is
    /// not labelled like the black-box.
    pub n_fidelity_failures: usize,
    /// Rules that do not contain their own instance.
    pub n_unsound_rules: usize,
    /// Explanations whose emitted transform has a negative weight.
    pub n_negative_transforms: usize,
    /// Largest count of nonzero weights in any latent column of any
    /// emitted transform.
    pub max_column_nonzeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResult {
    pub classifier_index: usize,
    pub explained: MetricReport,
    pub baseline: MetricReport,
    pub audit: ExplanationAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub metric: String,
    pub baseline_name: String,
    pub classifiers: Vec<ClassifierResult>,
    pub explained: Aggregate,
    pub baseline: Aggregate,
}

/// Seconds spent per classifier; kept out of the report so reports stay
/// reproducible.
#[derive(Debug, Clone, Default)]
pub struct BenchTimings {
    pub train_seconds: Vec<f64>,
    pub explain_seconds: Vec<f64>,
}

fn column_nonzeros(w: &crate::diffcore::Tensor) -> usize {
    let (m, k) = (w.shape()[0], w.shape()[1]);
    (0..k)
        .map(|r| (0..m).filter(|&j| w.data()[j * k + r] != 0.0).count())
        .max()
        .unwrap_or(0)
}

/// Index of the nearest (Euclidean) row among `candidates`; ties go to
/// the earlier candidate.
fn nearest(x: &[f64], rows: &[Vec<f64>], candidates: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &i in candidates {
        let d = euclid(x, &rows[i]);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn valid_by_label(pred: &[usize], labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_classes.max(2)];
    for (i, (&p, &l)) in pred.iter().zip(labels).enumerate() {
        if p == l {
            out[l].push(i);
        }
    }
    out
}

/// Input-space logistic baseline: `psi_j = beta_j x_j`. Instances the
/// baseline mislabels borrow the score of their nearest correctly labelled
/// training row of the black-box class.
pub fn inp_lr_importance(
    train_x: &[Vec<f64>],
    train_labels: &[usize],
    test_x: &[Vec<f64>],
    test_labels: &[usize],
    n_classes: usize,
    target: usize,
) -> Result<Vec<Vec<f64>>> {
    let lr = LogisticSurrogate::fit(train_x, train_labels, n_classes, &LogisticConfig::default())?;
    let beta = lr.coef_for(target);
    let pred: Vec<usize> = train_x.iter().map(|r| lr.predict(r)).collect();
    let pool = valid_by_label(&pred, train_labels, n_classes);
    Ok(crate::par::map_range(test_x.len(), |i| {
        let mut x = &test_x[i];
        if lr.predict(x) != test_labels[i] {
            if let Some(nn) = nearest(x, train_x, &pool[test_labels[i]]) {
                x = &train_x[nn];
            }
        }
        beta.iter().zip(x).map(|(b, v)| b * v).collect()
    }))
}

fn leaf_box(tree: &TreeSurrogate, x: &[f64]) -> AxisRule {
    let r = tree.latent_rule(x);
    AxisRule {
        lower: r.lower,
        upper: r.upper,
        class: tree.predict(x),
    }
}

/// Input-space tree baseline: the leaf box of each instance, borrowed from
/// the nearest correctly labelled training row when the tree is wrong.
pub fn inp_dt_rules(
    train_x: &[Vec<f64>],
    train_labels: &[usize],
    test_x: &[Vec<f64>],
    test_labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Vec<AxisRule>> {
    let tree = TreeSurrogate::fit_tuned(
        train_x,
        train_labels,
        n_classes,
        &TREE_DEPTHS,
        TREE_MIN_LEAF,
        seed,
    )?;
    let pred: Vec<usize> = train_x.iter().map(|r| tree.predict(r)).collect();
    let pool = valid_by_label(&pred, train_labels, n_classes);
    Ok(crate::par::map_range(test_x.len(), |i| {
        let x = &test_x[i];
        if tree.predict(x) != test_labels[i] {
            if let Some(nn) = nearest(x, train_x, &pool[test_labels[i]]) {
                return leaf_box(&tree, &train_x[nn]);
            }
        }
        leaf_box(&tree, x)
    }))
}

fn audit(
    expl: &[Result<Explanation>],
    x: &[Vec<f64>],
    labels: &[usize],
    pipeline: &super::model::Pipeline,
) -> ExplanationAudit {
    let mut a = ExplanationAudit {
        n_explained: expl.len(),
        ..ExplanationAudit::default()
    };
    for (i, e) in expl.iter().enumerate() {
        let Ok(e) = e else {
            a.n_errors += 1;
            continue;
        };
        a.n_refined += usize::from(e.refinement.is_some());
        a.max_column_nonzeros = a.max_column_nonzeros.max(column_nonzeros(&e.w));
        a.n_negative_transforms += usize::from(e.w.data().iter().any(|&v| v < 0.0));
        let has_nn = pipeline.file.store.nearest_valid(&e.z, labels[i]).is_some();
        if !has_nn {
            a.n_without_neighbor += 1;
        } else if pipeline.file.surrogate.predict(&e.z) != labels[i] {
            a.n_fidelity_failures += 1;
        }
        if let Some(r) = e.rule() {
            if e.kind == ExplanationKind::Rule && !r.contains(&x[i]) {
                a.n_unsound_rules += 1;
            }
        }
    }
    a
}

/// Trains and explains one synthetic classifier and scores both the
/// explanations and the input-space baseline against ground truth.
pub fn bench_classifier(
    cfg: &BenchConfig,
    index: usize,
    timings: &mut BenchTimings,
) -> Result<ClassifierResult> {
    let syn = &cfg.synthetic;
    let x = gen_dataset(syn, index)?;
    let clf = match cfg.family {
        Family::Linear => Transparent::Linear(make_linear(syn, index)?),
        Family::Rule => Transparent::Rule(make_rulebased(syn, index)?),
    };
    let bb = BlackBoxOutputs::from_transparent(&clf, &x)?;
    let (train_idx, test_idx) = split_indices(
        x.len(),
        TEST_FRACTION,
        cfg.split_seed.wrapping_add(index as u64),
    );
    let pick = |idx: &[usize]| idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>();
    let (train_x, test_x) = (pick(&train_idx), pick(&test_idx));
    let train_bb = bb.subset(&train_idx);
    let test_bb = bb.subset(&test_idx);
    let schema = FeatureSchema::all_continuous(syn.m());
    let kind = match cfg.family {
        Family::Linear => SurrogateKind::Lr,
        Family::Rule => SurrogateKind::Dt,
    };
    let tcfg = cfg.training(index);

    let t0 = std::time::Instant::now();
    let pipeline = fit_pipeline(
        &TrainData {
            x: &train_x,
            probs: &train_bb.probs,
            labels: &train_bb.labels,
            n_classes: 2,
            schema: &schema,
        },
        &tcfg,
        kind,
    )?;
    timings.train_seconds.push(t0.elapsed().as_secs_f64());

    let t1 = std::time::Instant::now();
    let ekind = match cfg.family {
        Family::Linear => ExplanationKind::Importance,
        Family::Rule => ExplanationKind::Rule,
    };
    let expl = pipeline
        .explainer()
        .explain_all(&test_x, &test_bb.labels, ekind, 1);
    timings.explain_seconds.push(t1.elapsed().as_secs_f64());

    let audit = audit(&expl, &test_x, &test_bb.labels, &pipeline);
    let echo = serde_json::json!({"family": cfg.family, "m": syn.m(), "classifier_index": index});
    let (explained, baseline) = match &clf {
        Transparent::Linear(c) => {
            let gt = gt_importance(c);
            let ours = expl
                .iter()
                .map(|e| {
                    e.as_ref()
                        .ok()
                        .and_then(|e| e.importance())
                        .map_or(0.0, |p| cs_score(p, &gt))
                })
                .collect();
            let base =
                inp_lr_importance(&train_x, &train_bb.labels, &test_x, &test_bb.labels, 2, 1)?
                    .iter()
                    .map(|p| cs_score(p, &gt))
                    .collect();
            (
                MetricReport::new("cs-score", echo.clone(), ours),
                MetricReport::new("cs-score", echo, base),
            )
        }
        Transparent::Rule(c) => {
            let gts: Vec<AxisRule> = test_x.iter().map(|r| gt_rule(c, r)).collect();
            let ours = expl
                .iter()
                .zip(&gts)
                .map(|(e, g)| match e.as_ref().ok().and_then(|e| e.rule()) {
                    Some(r) => cplt_score(r, g),
                    None => Ok(0.0),
                })
                .collect::<Result<Vec<_>>>()?;
            let base = inp_dt_rules(
                &train_x,
                &train_bb.labels,
                &test_x,
                &test_bb.labels,
                2,
                tcfg.seed,
            )?
            .iter()
            .zip(&gts)
            .map(|(r, g)| cplt_score(r, g))
            .collect::<Result<Vec<_>>>()?;
            (
                MetricReport::new("cplt-score", echo.clone(), ours),
                MetricReport::new("cplt-score", echo, base),
            )
        }
    };
    Ok(ClassifierResult {
        classifier_index: index,
        explained,
        baseline,
        audit,
    })
}

fn aggregate(reports: &[&MetricReport]) -> Aggregate {
    let all: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.per_instance.iter().copied())
        .collect();
    Aggregate {
        mean: all.iter().sum::<f64>() / all.len().max(1) as f64,
        mad: mad(&all),
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<(BenchReport, BenchTimings)> {
    if cfg.synthetic.n_classifiers == 0 {
        return Err(Error::Contract(
            "benchmark needs at least one classifier".into(),
        ));
    }
    let mut timings = BenchTimings::default();
    let mut classifiers = Vec::new();
    for index in 0..cfg.synthetic.n_classifiers {
        let r = bench_classifier(cfg, index, &mut timings)?;
        log::info!(
            "{} classifier {index}: explained {:.4} baseline {:.4}",
            cfg.family,
            r.explained.mean,
            r.baseline.mean
        );
        classifiers.push(r);
    }
    let explained = aggregate(&classifiers.iter().map(|c| &c.explained).collect::<Vec<_>>());
    let baseline = aggregate(&classifiers.iter().map(|c| &c.baseline).collect::<Vec<_>>());
    let (metric, baseline_name) = match cfg.family {
        Family::Linear => ("cs-score", "inp-lr"),
        Family::Rule => ("cplt-score", "inp-dt"),
    };
    Ok((
        BenchReport {
            config: cfg.clone(),
            metric: metric.into(),
            baseline_name: baseline_name.into(),
            classifiers,
            explained,
            baseline,
        },
        timings,
    ))
}
