//! Acceptance run: one PASS/FAIL line per criterion.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabexplain::config::TOL;
use tabexplain::diffcore::{Graph, Tensor};
use tabexplain::evalmetrics::{
    cplt_score, knn_accuracy, robustness_max_sensitivity, same_label_neighbors, spearman,
    triplet_accuracy, N_TRIPLETS,
};
use tabexplain::explain::{AxisRule, ExplanationKind};
use tabexplain::geometry::FeatureSchema;
use tabexplain::metaenc::{
    default_hidden, loss_and_grad, loss_collinearity, loss_soft_orthogonality, total_loss, train,
    BatchTargets, LossSpec, LossWeights, MetaEncoder, StabilityMode, TrainingConfig,
};
use tabexplain::pipeline::{
    evaluate, fit_pipeline, load_inputs, run_bench, run_eval, run_explain, run_train, BenchConfig,
    BenchReport, BlackBoxOutputs, EvalArgs, EvalData, EvalMetric, EvalOptions, ExplainArgs,
    RowSelection, SourceArgs, SurrogateKind, TrainArgs, TrainData,
};
use tabexplain::synthbench::{
    gen_dataset, make_linear, Family, SyntheticConfig, SyntheticManifest, Transparent,
};

type Check = Result<(bool, String), String>;

fn report(id: usize, name: &str, t0: Instant, outcome: Check) -> bool {
    let secs = t0.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let line = format!(
        "{} criterion {id:>2} {name}: {detail} [{secs:.1}s]\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // straight to the handle so the line shows without --nocapture
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(t.len());
    for i in 0..t.shape()[0] {
        let e: Vec<f64> = t.row(i).iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

fn spec(m: usize, k: usize, alpha: usize, mode: StabilityMode) -> LossSpec {
    LossSpec {
        m,
        k,
        alpha,
        weights: LossWeights::default(),
        mode,
        probe_norm: TOL.probe_norm,
    }
}

fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let (m, k, n) = (4, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = MetaEncoder::new(m, k, 2, default_hidden(m), 3).map_err(err)?;
    let x = random(&mut rng, &[n, m]);
    let y = softmax_rows(&random(&mut rng, &[n, 2]));
    let targets = BatchTargets::new(&x, &y, &FeatureSchema::all_continuous(m)).map_err(err)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for mode in [StabilityMode::Jacobian, StabilityMode::Perturbation] {
        let s = spec(m, k, 2, mode);
        let (_, grads) = loss_and_grad(&enc.params, &x, &targets, &s).map_err(err)?;
        for (p, g) in grads.iter().enumerate() {
            let mut fd = vec![0.0; g.len()];
            for (e, slot) in fd.iter_mut().enumerate() {
                let mut params = enc.params.clone();
                params[p].data_mut()[e] += h;
                let up = loss_and_grad(&params, &x, &targets, &s).map_err(err)?.0;
                params[p].data_mut()[e] -= 2.0 * h;
                let down = loss_and_grad(&params, &x, &targets, &s).map_err(err)?.0;
                *slot = (up - down) / (2.0 * h);
            }
            let diff: f64 = g
                .data()
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let na: f64 = g.data().iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(diff / na.max(nb).max(1e-12));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst < 1e-4 && secs < 10.0,
        format!("max relative error {worst:.2e}, {secs:.1}s"),
    ))
}

fn terms(
    enc: &MetaEncoder,
    x: &Tensor,
    y: &Tensor,
    mode: StabilityMode,
) -> Result<tabexplain::metaenc::LossTerms, String> {
    let targets = BatchTargets::new(x, y, &FeatureSchema::all_continuous(enc.m)).map_err(err)?;
    let mut g = Graph::new();
    let ps: Vec<_> = enc.params.iter().map(|p| g.input(p.clone())).collect();
    Ok(total_loss(
        &mut g,
        &ps,
        x,
        &targets,
        &spec(enc.m, enc.k, enc.alpha, mode),
    )
    .map_err(err)?
    .values(&g))
}

fn loss_zero_cases() -> Check {
    let m = 4;
    // identity transform for every input on orthogonal rows: all neighbour
    // distributions are uniform and coincide
    let mut id = MetaEncoder::new(m, m, m, [8, 6], 0).map_err(err)?;
    for p in [0, 2, 4] {
        let s = id.params[p].shape().to_vec();
        id.params[p] = Tensor::zeros(&s);
    }
    id.params[5] = Tensor::eye(m).reshaped(&[1, m * m]).map_err(err)?;
    let x = Tensor::eye(m);
    let t = terms(&id, &x, &x, StabilityMode::Jacobian)?;
    let kl = t.kl_x.abs().max(t.kl_y.abs());

    let s = 0.5f64.sqrt();
    let ortho = Tensor::new(vec![1, 3, 2], vec![s, s, s, -s, 0.0, 0.0]).map_err(err)?;
    let mut g = Graph::new();
    let v = g.input(ortho);
    let lso = loss_soft_orthogonality(&mut g, v).map_err(err)?;
    let so = g.value(lso).item().map_err(err)?.abs();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<f64> = (0..3000)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let mut g = Graph::new();
    let z = g.input(Tensor::new(vec![1000, 3], data).map_err(err)?);
    let lco = loss_collinearity(&mut g, z).map_err(err)?;
    let co = g.value(lco).item().map_err(err)?;

    let mut constant = MetaEncoder::new(m, 2, m, [8, 6], 1).map_err(err)?;
    constant.params[0] = Tensor::zeros(&[m, 8]);
    let xr = random(&mut rng, &[6, m]);
    let yr = softmax_rows(&random(&mut rng, &[6, 2]));
    let mut st = 0.0f64;
    for mode in [StabilityMode::Jacobian, StabilityMode::Perturbation] {
        st = st.max(
            terms(&constant, &xr, &yr, mode)?
                .stability
                .unwrap_or(f64::NAN)
                .abs(),
        );
    }
    let pass = kl < 1e-9 && so < 1e-9 && co <= 0.2 && st < 1e-9;
    Ok((
        pass,
        format!("kl {kl:.1e}, so {so:.1e}, co(n=1000) {co:.3}, st {st:.1e}"),
    ))
}

/// Benchmarks shared by the synthetic criteria.
struct Benches {
    linear: BenchReport,
    rule: BenchReport,
}

fn run_benches() -> Result<Benches, String> {
    let linear = run_bench(&BenchConfig::new(Family::Linear, 4, 0))
        .map_err(err)?
        .0;
    let rule = run_bench(&BenchConfig::new(Family::Rule, 4, 0))
        .map_err(err)?
        .0;
    Ok(Benches { linear, rule })
}

fn rule_soundness(b: &Benches) -> Check {
    let (mut n, mut unsound, mut refined, mut negative, mut errors) = (0, 0, 0, 0, 0);
    for c in &b.rule.classifiers {
        n += c.audit.n_explained;
        unsound += c.audit.n_unsound_rules;
        refined += c.audit.n_refined;
        negative += c.audit.n_negative_transforms;
        errors += c.audit.n_errors;
    }
    let pass = n >= 1000 && unsound == 0 && errors == 0 && refined > 0 && negative > 0;
    Ok((
        pass,
        format!("{unsound} of {n} rules miss their instance ({refined} refined, {negative} with negative weights, {errors} errors)"),
    ))
}

fn fidelity(b: &Benches) -> Check {
    let (mut n, mut fails, mut without, mut errors) = (0, 0, 0, 0);
    for c in b.linear.classifiers.iter().chain(&b.rule.classifiers) {
        n += c.audit.n_explained;
        fails += c.audit.n_fidelity_failures;
        without += c.audit.n_without_neighbor;
        errors += c.audit.n_errors;
    }
    Ok((
        fails == 0 && errors == 0,
        format!("{fails} label mismatches over {n} instances; {without} without a valid neighbour reported"),
    ))
}

fn linear_correctness(b: &Benches) -> Check {
    let (ours, base) = (b.linear.explained.mean, b.linear.baseline.mean);
    Ok((
        ours > base && ours >= 0.40,
        format!("cs-score {ours:.4} vs inp-lr {base:.4}"),
    ))
}

fn rule_correctness(b: &Benches) -> Check {
    let (ours, base) = (b.rule.explained.mean, b.rule.baseline.mean);
    let within = ours * 2.0 >= base && ours <= 2.0 * base;
    Ok((
        ours >= 0.30 && within,
        format!("cplt-score {ours:.4} vs inp-dt {base:.4}"),
    ))
}

fn sparsity(b: &Benches) -> Check {
    let alpha = b.linear.config.alpha.unwrap_or(usize::MAX);
    let per: Vec<usize> = b
        .linear
        .classifiers
        .iter()
        .map(|c| c.audit.n_explained)
        .collect();
    let worst = b
        .linear
        .classifiers
        .iter()
        .map(|c| c.audit.max_column_nonzeros)
        .max()
        .unwrap_or(0);
    let pass = alpha == 2 && worst <= 2 && per.iter().all(|&n| n == 2048);
    Ok((
        pass,
        format!("alpha {alpha}, at most {worst} nonzeros per column over {per:?} instances"),
    ))
}

/// Independent implementations the metric oracles are checked against.
mod brute {
    use tabexplain::explain::AxisRule;

    fn rank(v: &[f64], i: usize) -> f64 {
        let below = v.iter().filter(|&&x| x < v[i]).count() as f64;
        let same = v.iter().filter(|&&x| x == v[i]).count() as f64;
        below + (same + 1.0) / 2.0
    }

    pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ra: Vec<f64> = (0..a.len()).map(|i| rank(a, i)).collect();
        let rb: Vec<f64> = (0..b.len()).map(|i| rank(b, i)).collect();
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (ra[i] - ma) * (rb[i] - mb);
            va += (ra[i] - ma).powi(2);
            vb += (rb[i] - mb).powi(2);
        }
        if va == 0.0 || vb == 0.0 {
            0.0
        } else {
            cov / (va * vb).sqrt()
        }
    }

    /// `j` precedes `l` as a neighbour of some anchor.
    fn before(d: &[f64], j: usize, l: usize) -> bool {
        d[j] < d[l] || (d[j] == d[l] && j < l)
    }

    pub fn knn(d: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let n = labels.len();
        let mut hits = 0;
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let top: Vec<usize> = others
                .iter()
                .copied()
                .filter(|&j| others.iter().filter(|&&l| before(&d[i], l, j)).count() < k)
                .collect();
            let classes = labels.iter().max().unwrap() + 1;
            let votes: Vec<usize> = (0..classes)
                .map(|c| top.iter().filter(|&&j| labels[j] == c).count())
                .collect();
            let most = *votes.iter().max().unwrap();
            // among tied classes, the one owning the nearest neighbour
            let winner = top
                .iter()
                .copied()
                .filter(|&j| votes[labels[j]] == most)
                .reduce(|a, b| if before(&d[i], a, b) { a } else { b })
                .map(|j| labels[j])
                .unwrap();
            hits += usize::from(winner == labels[i]);
        }
        hits as f64 / n as f64
    }

    pub fn triplets(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let n = a.len();
        let (mut agree, mut total) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                for v in 0..n {
                    if i == j || i == v || j == v {
                        continue;
                    }
                    let sa = (a[i][j] - a[i][v]).signum() * f64::from(u8::from(a[i][j] != a[i][v]));
                    let sb = (b[i][j] - b[i][v]).signum() * f64::from(u8::from(b[i][j] != b[i][v]));
                    total += 1.0;
                    if sa == sb {
                        agree += 1.0;
                    }
                }
            }
        }
        agree / total
    }

    pub fn robustness(
        d: &[Vec<f64>],
        labels: &[usize],
        sim: &[Vec<f64>],
        k_max: usize,
    ) -> Vec<Option<f64>> {
        let n = labels.len();
        (0..n)
            .map(|i| {
                let mut nb: Vec<usize> = (0..n)
                    .filter(|&j| j != i && labels[j] == labels[i])
                    .collect();
                nb.sort_by(|&a, &b| d[i][a].partial_cmp(&d[i][b]).unwrap().then(a.cmp(&b)));
                nb.truncate(k_max);
                if nb.is_empty() {
                    return None;
                }
                let per_size: Vec<f64> = (1..=nb.len())
                    .map(|kk| {
                        nb[..kk]
                            .iter()
                            .map(|&j| sim[i][j])
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                Some(per_size.iter().sum::<f64>() / per_size.len() as f64)
            })
            .collect()
    }

    pub fn cplt(pred: &AxisRule, gt: &AxisRule) -> f64 {
        let p: Vec<f64> = pred.lower.iter().chain(&pred.upper).copied().collect();
        let g: Vec<f64> = gt.lower.iter().chain(&gt.upper).copied().collect();
        let scored: Vec<f64> = (0..g.len())
            .filter(|&s| g[s].is_finite())
            .map(|s| {
                if p[s].is_finite() {
                    1.0 / (1.0 + (p[s] - g[s]).powi(2))
                } else {
                    0.0
                }
            })
            .collect();
        if scored.is_empty() {
            return if p.iter().all(|v| v.is_infinite()) {
                1.0
            } else {
                0.0
            };
        }
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

fn coarse(rng: &mut ChaCha8Rng) -> f64 {
    // few distinct values so ties come up
    f64::from(rng.random_range(0..5u8)) * 0.5
}

fn symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = coarse(rng);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn random_rule(rng: &mut ChaCha8Rng, m: usize) -> AxisRule {
    let mut r = AxisRule::unbounded(m, 0);
    for j in 0..m {
        if rng.random_bool(0.6) {
            r.lower[j] = rng.random_range(-2.0..0.0);
        }
        if rng.random_bool(0.6) {
            r.upper[j] = rng.random_range(0.0..2.0);
        }
    }
    r
}

fn metric_oracles() -> Check {
    const CASES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 5];
    for case in 0..CASES {
        let n = rng.random_range(4..=10);
        let a: Vec<f64> = (0..n).map(|_| coarse(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| coarse(&mut rng)).collect();
        worst[0] =
            worst[0].max((spearman(&a, &b).map_err(err)?.value - brute::spearman(&a, &b)).abs());

        let d = symmetric(&mut rng, n);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let k = rng.random_range(1..n);
        let got = knn_accuracy(n, &labels, k, |i, j| d[i][j]).map_err(err)?;
        worst[1] = worst[1].max((got - brute::knn(&d, &labels, k)).abs());

        let e = symmetric(&mut rng, n);
        let got = triplet_accuracy(n, |i, j| d[i][j], |i, j| e[i][j], N_TRIPLETS, case as u64)
            .map_err(err)?;
        worst[2] = worst[2].max((got - brute::triplets(&d, &e)).abs());

        let sim: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let k_max = rng.random_range(1..=n);
        let nb = same_label_neighbors(n, &labels, k_max, |i, j| d[i][j]);
        let got = robustness_max_sensitivity(&nb, k_max, |i, j| sim[i][j]);
        for (g, w) in got.iter().zip(brute::robustness(&d, &labels, &sim, k_max)) {
            match (g, w) {
                (Some(g), Some(w)) => worst[3] = worst[3].max((g.score - w).abs()),
                (None, None) => {}
                _ => worst[3] = f64::INFINITY,
            }
        }

        let m = rng.random_range(1..=6);
        let (p, g) = (random_rule(&mut rng, m), random_rule(&mut rng, m));
        worst[4] = worst[4].max((cplt_score(&p, &g).map_err(err)? - brute::cplt(&p, &g)).abs());
    }
    let pass = worst.iter().all(|&w| w <= 1e-10);
    Ok((
        pass,
        format!(
            "{CASES} cases, max deviation spearman {:.1e}, knn {:.1e}, triplet {:.1e}, robustness {:.1e}, cplt {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    ))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn breast_source() -> SourceArgs {
    let d = data_dir();
    SourceArgs {
        data: Some(d.join("breast.csv")),
        schema: Some(d.join("breast_schema.json")),
        preds: Some(d.join("breast_preds.csv")),
        synthetic_manifest: None,
        split_seed: 0,
    }
}

fn latent_quality() -> Check {
    let t0 = Instant::now();
    let inputs = load_inputs(&breast_source(), None).map_err(err)?;
    let d = &inputs.dataset;
    let (train_x, test_x) = (d.rows(&d.train), d.rows(&d.test));
    let (train_bb, test_bb) = (inputs.bb.subset(&d.train), inputs.bb.subset(&d.test));
    let mut best_gain = (f64::NEG_INFINITY, 0);
    let mut best_triplet = (f64::NEG_INFINITY, 0);
    let mut all = Vec::new();
    for k in [2, 4, 8, 16, 32] {
        let cfg = TrainingConfig {
            k,
            weights: LossWeights {
                lambda_y: 0.0,
                ..LossWeights::default()
            },
            ..TrainingConfig::default()
        };
        let data = TrainData {
            x: &train_x,
            probs: &train_bb.probs,
            labels: &train_bb.labels,
            n_classes: train_bb.n_classes,
            schema: &d.schema,
        };
        let p = fit_pipeline(&data, &cfg, SurrogateKind::Lr).map_err(err)?;
        let eval = EvalData {
            x: &test_x,
            bb: &test_bb,
            schema: &d.schema,
        };
        let opt = EvalOptions::default();
        let gain = evaluate(&p, &eval, EvalMetric::KnnGain, &opt)
            .map_err(err)?
            .mean;
        let trip = evaluate(&p, &eval, EvalMetric::TripletFeature, &opt)
            .map_err(err)?
            .mean;
        all.push(format!("k={k}: {gain:.3}/{trip:.3}"));
        if gain > best_gain.0 {
            best_gain = (gain, k);
        }
        if trip > best_triplet.0 {
            best_triplet = (trip, k);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = (0.93..=1.08).contains(&best_gain.0) && best_triplet.0 >= 0.80 && secs < 600.0;
    Ok((
        pass,
        format!(
            "best knn gain {:.4} (k={}), best triplet {:.4} (k={}); gain/triplet {}",
            best_gain.0,
            best_gain.1,
            best_triplet.0,
            best_triplet.1,
            all.join(", ")
        ),
    ))
}

fn efficiency() -> Check {
    let m = 16;
    let syn = SyntheticConfig::standard(m, 7);
    let x = gen_dataset(&syn, 0).map_err(err)?;
    let clf = Transparent::Linear(make_linear(&syn, 0).map_err(err)?);
    let bb = BlackBoxOutputs::from_transparent(&clf, &x).map_err(err)?;
    let n_train = 8192;
    let (train_x, test_x) = (&x[..n_train], &x[n_train..]);
    let schema = FeatureSchema::all_continuous(m);
    let base = TrainingConfig {
        k: 8,
        alpha: Some(2),
        seed: 7,
        ..TrainingConfig::default()
    };
    let cfg = TrainingConfig {
        pretrain_epochs: 2,
        ramp_epochs: 2,
        finetune_epochs: 4,
        ..base.clone()
    };
    let data = TrainData {
        x: train_x,
        probs: &bb.probs[..n_train],
        labels: &bb.labels[..n_train],
        n_classes: 2,
        schema: &schema,
    };
    let p = fit_pipeline(&data, &cfg, SurrogateKind::Lr).map_err(err)?;
    let labels = &bb.labels[n_train..];
    let t0 = Instant::now();
    let out = p
        .explainer()
        .explain_all(test_x, labels, ExplanationKind::Importance, 1);
    let per = t0.elapsed().as_secs_f64() / test_x.len() as f64;
    let failed = out.iter().filter(|e| e.is_err()).count();

    let one_epoch = TrainingConfig {
        pretrain_epochs: 1,
        ramp_epochs: 0,
        finetune_epochs: 0,
        ..base
    };
    let xt = Tensor::from_rows(train_x).map_err(err)?;
    let yt = Tensor::from_rows(&bb.probs[..n_train]).map_err(err)?;
    let t1 = Instant::now();
    train(&xt, &yt, &schema, &one_epoch).map_err(err)?;
    let epoch = t1.elapsed().as_secs_f64();
    let ratio = epoch / per;
    Ok((
        per < 0.05 && ratio >= 100.0 && failed == 0,
        format!(
            "{:.3e}s per instance over {}, one epoch {epoch:.2}s, ratio {ratio:.0}",
            per,
            test_x.len()
        ),
    ))
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

/// Train, explain and evaluate into `dir`, returning every produced file.
fn pipeline_run(
    dir: &Path,
    source: &SourceArgs,
    kind: SurrogateKind,
    ekind: ExplanationKind,
) -> Result<Vec<Vec<u8>>, String> {
    let model = dir.join("model.json");
    let training = TrainingConfig {
        k: 4,
        alpha: Some(2),
        pretrain_epochs: 2,
        ramp_epochs: 2,
        finetune_epochs: 4,
        seed: 5,
        ..TrainingConfig::default()
    };
    run_train(&TrainArgs {
        source: source.clone(),
        surrogate: kind,
        training,
        model: model.clone(),
    })
    .map_err(err)?;
    let mut files = vec![read(&model)?];
    for (name, k) in [
        ("explain.jsonl", ekind),
        ("cf.jsonl", ExplanationKind::Counterfactual),
    ] {
        if k == ExplanationKind::Counterfactual && kind == SurrogateKind::Lr {
            continue;
        }
        let out = dir.join(name);
        run_explain(&ExplainArgs {
            source: source.clone(),
            model: model.clone(),
            kind: k,
            out: Some(out.clone()),
            target_class: None,
            rows: RowSelection::Test,
        })
        .map_err(err)?;
        files.push(read(&out)?);
    }
    for metric in EvalMetric::ALL {
        let out = dir.join(format!("{metric}.json"));
        run_eval(&EvalArgs {
            source: source.clone(),
            model: model.clone(),
            metric,
            options: EvalOptions {
                kind: ekind,
                n_triplets: 2000,
                ..EvalOptions::default()
            },
            out: Some(out.clone()),
        })
        .map_err(err)?;
        files.push(read(&out)?);
    }
    Ok(files)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let manifest = SyntheticManifest {
        m: 6,
        t: 4,
        u: 2,
        family: Family::Rule,
        seed: 11,
        classifier_index: 1,
        n_instances: 1500,
    };
    let man_path = tmp.path().join("manifest.json");
    fs::write(&man_path, serde_json::to_vec(&manifest).map_err(err)?).map_err(err)?;
    let synthetic = SourceArgs {
        synthetic_manifest: Some(man_path),
        split_seed: 3,
        ..SourceArgs::default()
    };
    let mut bench = BenchConfig::new(Family::Linear, 4, 9);
    bench.synthetic.n_classifiers = 2;
    bench.synthetic.n_instances = 1000;

    let mut runs = Vec::new();
    for r in 0..2 {
        let mut files = Vec::new();
        for (name, src, kind, ekind) in [
            ("syn", &synthetic, SurrogateKind::Dt, ExplanationKind::Rule),
            (
                "breast",
                &breast_source(),
                SurrogateKind::Lr,
                ExplanationKind::Importance,
            ),
        ] {
            let dir = tmp.path().join(format!("{name}{r}"));
            fs::create_dir(&dir).map_err(err)?;
            files.extend(pipeline_run(&dir, src, kind, ekind)?);
        }
        let report = run_bench(&bench).map_err(err)?.0;
        files.push(serde_json::to_vec(&report).map_err(err)?);
        runs.push(files);
    }
    let n = runs[0].len();
    let same = runs[0] == runs[1];
    let bytes: usize = runs[0].iter().map(Vec::len).sum();
    Ok((
        same,
        format!("{n} artifacts ({bytes} bytes) identical across two runs: {same}"),
    ))
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    let t = Instant::now();
    passed.push(report(1, "gradient suite", t, gradient_suite()));
    let t = Instant::now();
    passed.push(report(2, "loss zero cases", t, loss_zero_cases()));

    let t = Instant::now();
    let benches = run_benches();
    let bench_secs = t.elapsed().as_secs_f64();
    let with = |f: fn(&Benches) -> Check| benches.as_ref().map_err(Clone::clone).and_then(f);
    let t = Instant::now();
    passed.push(report(3, "rule soundness", t, with(rule_soundness)));
    passed.push(report(4, "perfect fidelity", t, with(fidelity)));
    passed.push(report(
        5,
        "linear synthetic correctness",
        t,
        with(linear_correctness).map(|(p, d)| {
            (
                p && bench_secs < 900.0,
                format!("{d}; both benches {bench_secs:.0}s"),
            )
        }),
    ));
    passed.push(report(
        6,
        "rule synthetic correctness",
        t,
        with(rule_correctness),
    ));
    passed.push(report(7, "sparsity", t, with(sparsity)));

    let t = Instant::now();
    passed.push(report(8, "metric oracles", t, metric_oracles()));
    let t = Instant::now();
    passed.push(report(9, "latent quality", t, latent_quality()));
    let t = Instant::now();
    passed.push(report(10, "efficiency", t, efficiency()));
    let t = Instant::now();
    passed.push(report(11, "determinism", t, determinism()));

    let failed: Vec<usize> = (1..=passed.len()).filter(|&i| !passed[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
