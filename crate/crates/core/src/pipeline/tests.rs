use std::fs;

use super::*;
use crate::synthbench::Family;

fn quick_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        k: 3,
        alpha: Some(2),
        batch_size: 64,
        pretrain_epochs: 2,
        ramp_epochs: 2,
        finetune_epochs: 2,
        seed,
        ..TrainingConfig::default()
    }
}

fn manifest(dir: &Path, family: Family, n: usize) -> PathBuf {
    let man = SyntheticManifest {
        m: 4,
        t: 4,
        u: 0,
        family,
        seed: 5,
        classifier_index: 0,
        n_instances: n,
    };
    let p = dir.join(format!("{family}.json"));
    fs::write(&p, serde_json::to_string(&man).unwrap()).unwrap();
    p
}

fn train_args(dir: &Path, family: Family, surrogate: SurrogateKind, name: &str) -> TrainArgs {
    TrainArgs {
        source: SourceArgs {
            synthetic_manifest: Some(manifest(dir, family, 300)),
            split_seed: 1,
            ..SourceArgs::default()
        },
        surrogate,
        training: quick_training(3),
        model: dir.join(name),
    }
}

#[test]
fn retraining_is_byte_identical_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_args(dir.path(), Family::Linear, SurrogateKind::Lr, "a.json");
    let b = TrainArgs {
        model: dir.path().join("b.json"),
        ..a.clone()
    };
    let pa = run_train(&a).unwrap();
    run_train(&b).unwrap();
    assert_eq!(fs::read(&a.model).unwrap(), fs::read(&b.model).unwrap());

    let loaded = Pipeline::load(&a.model).unwrap();
    assert_eq!(loaded.file, pa.file);
    let probe: Vec<Vec<f64>> = pa.file.store.x.iter().take(20).cloned().collect();
    let labels: Vec<usize> = pa
        .file
        .store
        .blackbox_label
        .iter()
        .take(20)
        .copied()
        .collect();
    let e1 = pa
        .explainer()
        .explain_all(&probe, &labels, ExplanationKind::Importance, 1);
    let e2 = loaded
        .explainer()
        .explain_all(&probe, &labels, ExplanationKind::Importance, 1);
    for (x, y) in e1.iter().zip(&e2) {
        assert_eq!(x.as_ref().unwrap(), y.as_ref().unwrap());
    }
}

#[test]
fn store_regenerates_from_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let p = run_train(&train_args(
        dir.path(),
        Family::Rule,
        SurrogateKind::Dt,
        "m.json",
    ))
    .unwrap();
    let s = &p.file.store;
    assert_eq!(p.encode(&s.x).unwrap(), s.z);
    for (z, l) in s.z.iter().zip(&s.surrogate_label) {
        assert_eq!(p.file.surrogate.predict(z), *l);
    }
}

#[test]
fn explain_writes_one_record_per_test_row() {
    let dir = tempfile::tempdir().unwrap();
    let t = train_args(dir.path(), Family::Linear, SurrogateKind::Lr, "m.json");
    run_train(&t).unwrap();
    let out = dir.path().join("e.jsonl");
    let s = run_explain(&ExplainArgs {
        source: t.source.clone(),
        model: t.model.clone(),
        kind: ExplanationKind::Importance,
        out: Some(out.clone()),
        target_class: None,
        rows: RowSelection::Test,
    })
    .unwrap();
    assert_eq!(s.n, 60);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 60);
    for v in &lines {
        assert_eq!(v["psi"].as_array().unwrap().len(), 4);
        assert_eq!(v["kind"], "importance");
    }

    let out2 = dir.path().join("e2.jsonl");
    run_explain(&ExplainArgs {
        source: t.source.clone(),
        model: t.model.clone(),
        kind: ExplanationKind::Importance,
        out: Some(out2.clone()),
        target_class: None,
        rows: RowSelection::Test,
    })
    .unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn empty_instance_file_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let rows = "row_id,a,b\n0,1,2\n1,2,1\n2,0,0\n3,1,1\n4,3,2\n5,2,2\n6,0,1\n7,1,0\n8,2,3\n9,3,3\n";
    let preds = "row_id,p0,p1\n0,0.9,0.1\n1,0.2,0.8\n2,0.6,0.4\n3,0.3,0.7\n4,0.1,0.9\n5,0.8,0.2\n6,0.7,0.3\n7,0.4,0.6\n8,0.5,0.5\n9,0.95,0.05\n";
    let schema = r#"{"id_column":"row_id","columns":[{"name":"a","kind":"continuous"},{"name":"b","kind":"continuous"}]}"#;
    for (n, body) in [("d.csv", rows), ("p.csv", preds), ("s.json", schema)] {
        fs::write(dir.path().join(n), body).unwrap();
    }
    let source = SourceArgs {
        data: Some(dir.path().join("d.csv")),
        schema: Some(dir.path().join("s.json")),
        preds: Some(dir.path().join("p.csv")),
        synthetic_manifest: None,
        split_seed: 0,
    };
    let model = dir.path().join("m.json");
    run_train(&TrainArgs {
        source: source.clone(),
        surrogate: SurrogateKind::Dt,
        training: TrainingConfig {
            k: 2,
            alpha: Some(1),
            ..quick_training(0)
        },
        model: model.clone(),
    })
    .unwrap();
    fs::write(dir.path().join("empty.csv"), "row_id,a,b\n").unwrap();
    fs::write(dir.path().join("empty_p.csv"), "row_id,p0,p1\n").unwrap();
    let out = dir.path().join("o.jsonl");
    let s = run_explain(&ExplainArgs {
        source: SourceArgs {
            data: Some(dir.path().join("empty.csv")),
            preds: Some(dir.path().join("empty_p.csv")),
            ..source
        },
        model,
        kind: ExplanationKind::Rule,
        out: Some(out.clone()),
        target_class: None,
        rows: RowSelection::All,
    })
    .unwrap();
    assert_eq!(s.n, 0);
    assert_eq!(fs::read_to_string(out).unwrap(), "");
}

#[test]
fn eval_metrics_run_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let t = train_args(dir.path(), Family::Linear, SurrogateKind::Lr, "m.json");
    run_train(&t).unwrap();
    for metric in EvalMetric::ALL {
        let args = EvalArgs {
            source: t.source.clone(),
            model: t.model.clone(),
            metric,
            options: EvalOptions {
                n_triplets: 2000,
                ..EvalOptions::default()
            },
            out: Some(dir.path().join(format!("{metric}.json"))),
        };
        let a = run_eval(&args).unwrap();
        let b = run_eval(&args).unwrap();
        assert_eq!(a, b, "{metric}");
        assert!(a.mean.is_finite(), "{metric}");
        assert_eq!(metric.to_string().parse::<EvalMetric>().unwrap(), metric);
    }
}

#[test]
fn inspect_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let t = train_args(dir.path(), Family::Rule, SurrogateKind::Dt, "m.json");
    run_train(&t).unwrap();
    let v = inspect(&t.model).unwrap();
    assert_eq!(v["m"], 4);
    assert_eq!(v["k"], 3);
    assert_eq!(v["surrogate"]["kind"], "dt");
    assert_eq!(v["store_rows"], 240);
}

#[test]
fn bench_smoke_reports_every_classifier() {
    let mut cfg = BenchConfig::new(Family::Linear, 4, 2);
    cfg.synthetic.n_instances = 200;
    cfg.synthetic.n_classifiers = 2;
    cfg.pretrain_epochs = 1;
    cfg.ramp_epochs = 1;
    cfg.finetune_epochs = 1;
    let (r, t) = run_bench(&cfg).unwrap();
    assert_eq!(r.classifiers.len(), 2);
    assert_eq!(t.train_seconds.len(), 2);
    for c in &r.classifiers {
        assert_eq!(c.explained.per_instance.len(), 40);
        assert_eq!(c.audit.n_fidelity_failures, 0);
        assert!(c.audit.max_column_nonzeros <= 2);
    }
    let (again, _) = run_bench(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&r).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}
