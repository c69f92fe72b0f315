//! Data ingestion, training and explanation runs, benchmarks, evaluation
//! and model persistence.

mod bench;
mod blackbox;
mod data;
mod eval;
mod model;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::error::{contract, Result};
use crate::evalmetrics::MetricReport;
use crate::explain::ExplanationKind;
use crate::metaenc::TrainingConfig;
use crate::surrogate::Surrogate;
use crate::synthbench::SyntheticManifest;

pub use bench::{
    bench_classifier, inp_dt_rules, inp_lr_importance, run_bench, Aggregate, BenchConfig,
    BenchReport, BenchTimings, ClassifierResult, ExplanationAudit,
};
pub use blackbox::{hard_label, load_preds, BlackBoxOutputs};
pub use data::{
    load_dataset, read_table, split_indices, ColumnKind, ColumnSpec, ColumnTransform, Dataset,
    Preprocessor, RawTable, Schema, TEST_FRACTION,
};
pub use eval::{evaluate, EvalData, EvalMetric, EvalOptions};
pub use model::{
    fit_pipeline, fit_surrogate, Pipeline, PipelineModel, SurrogateKind, TrainData,
    PIPELINE_FORMAT_VERSION,
};

/// Where rows and black-box outputs come from.
#[derive(Debug, Clone, Default)]
pub struct SourceArgs {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub preds: Option<PathBuf>,
    pub synthetic_manifest: Option<PathBuf>,
    pub split_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub dataset: Dataset,
    pub bb: BlackBoxOutputs,
}

fn read_manifest(path: &Path) -> Result<SyntheticManifest> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

/// Loads rows and outputs. A manifest alone generates both; otherwise rows
/// come from `--data` and outputs from `--preds`, or from the manifest's
/// classifier applied to the loaded rows.
pub fn load_inputs(src: &SourceArgs, fitted: Option<&Preprocessor>) -> Result<Inputs> {
    let manifest = src
        .synthetic_manifest
        .as_deref()
        .map(read_manifest)
        .transpose()?;
    let dataset = match (&src.data, &manifest) {
        (Some(data), _) => {
            let Some(schema) = &src.schema else {
                return contract("--data needs --schema");
            };
            load_dataset(data, schema, src.split_seed, fitted)?
        }
        (None, Some(man)) => Dataset::from_rows(man.dataset()?, src.split_seed),
        (None, None) => return contract("either --data or --synthetic-manifest is required"),
    };
    let bb = match (&src.preds, &manifest) {
        (Some(p), _) => load_preds(p, &dataset.row_ids)?,
        (None, Some(man)) => BlackBoxOutputs::from_transparent(&man.classifier()?, &dataset.x)?,
        (None, None) => return contract("either --preds or --synthetic-manifest is required"),
    };
    if bb.labels.len() != dataset.x.len() {
        return contract("black-box outputs and rows differ in count");
    }
    Ok(Inputs { dataset, bb })
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub source: SourceArgs,
    pub surrogate: SurrogateKind,
    pub training: TrainingConfig,
    pub model: PathBuf,
}

pub fn run_train(args: &TrainArgs) -> Result<Pipeline> {
    let inputs = load_inputs(&args.source, None)?;
    let d = &inputs.dataset;
    let train_x = d.rows(&d.train);
    let bb = inputs.bb.subset(&d.train);
    let mut pipeline = fit_pipeline(
        &TrainData {
            x: &train_x,
            probs: &bb.probs,
            labels: &bb.labels,
            n_classes: bb.n_classes,
            schema: &d.schema,
        },
        &args.training,
        args.surrogate,
    )?;
    pipeline.file.feature_names = d.feature_names.clone();
    pipeline.file.preprocessor = d.preprocessor.clone();
    pipeline.file.split_seed = args.source.split_seed;
    pipeline.save(&args.model)?;
    Ok(pipeline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelection {
    Test,
    All,
}

#[derive(Debug, Clone)]
pub struct ExplainArgs {
    pub source: SourceArgs,
    pub model: PathBuf,
    pub kind: ExplanationKind,
    pub out: Option<PathBuf>,
    pub target_class: Option<usize>,
    pub rows: RowSelection,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainSummary {
    pub n: usize,
    pub n_failed: usize,
    pub n_invalid: usize,
    pub seconds: f64,
    pub seconds_per_instance: f64,
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

/// Explains the selected rows and writes one JSON line per row. Rows that
/// fail carry an `error` field; the run continues.
pub fn run_explain(args: &ExplainArgs) -> Result<ExplainSummary> {
    let pipeline = Pipeline::load(&args.model)?;
    let inputs = load_inputs(&args.source, pipeline.file.preprocessor.as_ref())?;
    let d = &inputs.dataset;
    let idx: Vec<usize> = match args.rows {
        RowSelection::Test => d.test.clone(),
        RowSelection::All => (0..d.x.len()).collect(),
    };
    let x = d.rows(&idx);
    let labels: Vec<usize> = idx.iter().map(|&i| inputs.bb.labels[i]).collect();
    let target = args.target_class.unwrap_or(pipeline.file.target_class);
    let t0 = Instant::now();
    let results = pipeline
        .explainer()
        .explain_all(&x, &labels, args.kind, target);
    let seconds = t0.elapsed().as_secs_f64();
    let mut w = writer(args.out.as_deref())?;
    let mut summary = ExplainSummary {
        n: idx.len(),
        n_failed: 0,
        n_invalid: 0,
        seconds,
        seconds_per_instance: if idx.is_empty() {
            0.0
        } else {
            seconds / idx.len() as f64
        },
    };
    for (r, &i) in results.iter().zip(&idx) {
        let id = &d.row_ids[i];
        let v = match r {
            Ok(e) => {
                summary.n_invalid += usize::from(!e.valid);
                e.to_json(id)
            }
            Err(err) => {
                summary.n_failed += 1;
                json!({"instance_id": id, "kind": args.kind.to_string(), "error": err.to_string()})
            }
        };
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub source: SourceArgs,
    pub model: PathBuf,
    pub metric: EvalMetric,
    pub options: EvalOptions,
    pub out: Option<PathBuf>,
}

/// Scores the test rows with one metric and writes the report as JSON.
pub fn run_eval(args: &EvalArgs) -> Result<MetricReport> {
    let pipeline = Pipeline::load(&args.model)?;
    let inputs = load_inputs(&args.source, pipeline.file.preprocessor.as_ref())?;
    let d = &inputs.dataset;
    let x = d.rows(&d.test);
    let bb = inputs.bb.subset(&d.test);
    let report = evaluate(
        &pipeline,
        &EvalData {
            x: &x,
            bb: &bb,
            schema: &d.schema,
        },
        args.metric,
        &args.options,
    )?;
    write_json(args.out.as_deref(), &report)?;
    Ok(report)
}

pub fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Summary of a saved model.
pub fn inspect(path: &Path) -> Result<serde_json::Value> {
    let p = Pipeline::load(path)?;
    let f = &p.file;
    let store = &f.store;
    let valid = (0..store.len()).filter(|&i| store.is_valid(i)).count();
    let surrogate = match &f.surrogate {
        Surrogate::Logistic(lr) => {
            json!({"kind": "lr", "coefficients": lr.models.iter().map(|m| &m.coef).collect::<Vec<_>>()})
        }
        Surrogate::Tree(t) => json!({"kind": "dt", "depth": t.depth(), "leaves": t.leaves().len()}),
    };
    Ok(json!({
        "format_version": f.format_version,
        "m": f.encoder.m,
        "k": f.encoder.k,
        "alpha": f.encoder.alpha,
        "n_params": p.encoder.n_params(),
        "n_classes": f.n_classes,
        "target_class": f.target_class,
        "split_seed": f.split_seed,
        "features": f.feature_names,
        "surrogate": surrogate,
        "store_rows": store.len(),
        "store_fidelity": if store.is_empty() { 0.0 } else { valid as f64 / store.len() as f64 },
        "training_config": f.encoder.training_config,
    }))
}

#[cfg(test)]
mod tests;
