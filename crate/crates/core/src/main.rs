use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tabexplain::explain::ExplanationKind;
use tabexplain::metaenc::{LossWeights, StabilityMode, TrainingConfig};
use tabexplain::pipeline::{
    inspect, run_bench, run_eval, run_explain, run_train, write_json, BenchConfig, EvalArgs,
    EvalMetric, EvalOptions, ExplainArgs, RowSelection, SourceArgs, SurrogateKind, TrainArgs,
};
use tabexplain::synthbench::Family;

#[derive(Parser)]
#[command(
    name = "tabexplain",
    version,
    about = "Local explanations for tabular classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and surrogate and save the model.
    Train(TrainCmd),
    /// Explain rows with a saved model, one JSON line per row.
    Explain(ExplainCmd),
    /// Score explanations on synthetic transparent classifiers.
    Bench(BenchCmd),
    /// Score a saved model with one evaluation metric.
    Eval(EvalCmd),
    /// Print a summary of a saved model.
    Inspect(InspectCmd),
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    synthetic_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl Source {
    fn args(&self) -> SourceArgs {
        SourceArgs {
            data: self.data.clone(),
            schema: self.schema.clone(),
            preds: self.preds.clone(),
            synthetic_manifest: self.synthetic_manifest.clone(),
            split_seed: self.split_seed,
        }
    }
}

#[derive(Args)]
struct Objective {
    #[arg(long, default_value_t = 1.0)]
    lambda_y: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_st: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_so: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_co: f64,
    #[arg(long, default_value = "jacobian")]
    stability_mode: StabilityMode,
    /// Latent dimensions.
    #[arg(long)]
    k: Option<usize>,
    /// Input features per latent dimension; dense when omitted.
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    ramp_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
}

impl Objective {
    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_y: self.lambda_y,
            lambda_st: self.lambda_st,
            lambda_so: self.lambda_so,
            lambda_co: self.lambda_co,
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    objective: Objective,
    #[arg(long, default_value = "lr")]
    surrogate: SurrogateKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rows {
    Test,
    All,
}

#[derive(Args)]
struct ExplainCmd {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "importance")]
    kind: ExplanationKind,
    /// JSONL output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    target_class: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    rows: Rows,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long, default_value = "linear")]
    family: Family,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long)]
    n_classifiers: Option<usize>,
    #[arg(long)]
    n_instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    split_seed: Option<u64>,
    #[command(flatten)]
    objective: Objective,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    metric: EvalMetric,
    /// Explanation kind for the explanation-based metrics.
    #[arg(long, default_value = "importance")]
    kind: ExplanationKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    n_triplets: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectCmd {
    #[arg(long)]
    model: PathBuf,
}

fn train(cmd: TrainCmd) -> tabexplain::Result<()> {
    let d = TrainingConfig::default();
    let o = &cmd.objective;
    let training = TrainingConfig {
        k: o.k.unwrap_or(d.k),
        alpha: o.alpha,
        weights: o.weights(),
        stability_mode: o.stability_mode,
        batch_size: cmd.batch_size.unwrap_or(d.batch_size),
        pretrain_epochs: o.pretrain_epochs.unwrap_or(d.pretrain_epochs),
        ramp_epochs: o.ramp_epochs.unwrap_or(d.ramp_epochs),
        finetune_epochs: o.finetune_epochs.unwrap_or(d.finetune_epochs),
        seed: cmd.seed,
        ..d
    };
    let t0 = Instant::now();
    run_train(&TrainArgs {
        source: cmd.source.args(),
        surrogate: cmd.surrogate,
        training,
        model: cmd.model.clone(),
    })?;
    eprintln!(
        "trained in {:.2}s, saved {}",
        t0.elapsed().as_secs_f64(),
        cmd.model.display()
    );
    Ok(())
}

fn explain(cmd: ExplainCmd) -> tabexplain::Result<()> {
    let s = run_explain(&ExplainArgs {
        source: cmd.source.args(),
        model: cmd.model,
        kind: cmd.kind,
        out: cmd.out,
        target_class: cmd.target_class,
        rows: match cmd.rows {
            Rows::Test => RowSelection::Test,
            Rows::All => RowSelection::All,
        },
    })?;
    eprintln!(
        "explained {} rows ({} failed, {} without a valid neighbour) in {:.3}s, {:.2e}s per row",
        s.n, s.n_failed, s.n_invalid, s.seconds, s.seconds_per_instance
    );
    Ok(())
}

fn bench(cmd: BenchCmd) -> tabexplain::Result<()> {
    let mut cfg = BenchConfig::new(cmd.family, cmd.m, cmd.seed);
    let o = &cmd.objective;
    if let Some(n) = cmd.n_classifiers {
        cfg.synthetic.n_classifiers = n;
    }
    if let Some(n) = cmd.n_instances {
        cfg.synthetic.n_instances = n;
    }
    if let Some(s) = cmd.split_seed {
        cfg.split_seed = s;
    }
    cfg.k = o.k.unwrap_or(cfg.k);
    cfg.alpha = o.alpha.or(cfg.alpha);
    cfg.weights = o.weights();
    cfg.stability_mode = o.stability_mode;
    cfg.pretrain_epochs = o.pretrain_epochs.unwrap_or(cfg.pretrain_epochs);
    cfg.ramp_epochs = o.ramp_epochs.unwrap_or(cfg.ramp_epochs);
    cfg.finetune_epochs = o.finetune_epochs.unwrap_or(cfg.finetune_epochs);
    let (report, timings) = run_bench(&cfg)?;
    write_json(cmd.out.as_deref(), &report)?;
    let train: f64 = timings.train_seconds.iter().sum();
    let expl: f64 = timings.explain_seconds.iter().sum();
    eprintln!(
        "{} {}: explained {:.4} vs {} {:.4}; training {:.2}s, explaining {:.3}s",
        report.metric,
        cfg.family,
        report.explained.mean,
        report.baseline_name,
        report.baseline.mean,
        train,
        expl
    );
    Ok(())
}

fn eval(cmd: EvalCmd) -> tabexplain::Result<()> {
    let d = EvalOptions::default();
    let options = EvalOptions {
        kind: cmd.kind,
        seed: cmd.seed,
        k: cmd.knn_k.unwrap_or(d.k),
        k_max: cmd.k_max.unwrap_or(d.k_max),
        n_triplets: cmd.n_triplets.unwrap_or(d.n_triplets),
    };
    let t0 = Instant::now();
    let r = run_eval(&EvalArgs {
        source: cmd.source.args(),
        model: cmd.model,
        metric: cmd.metric,
        options,
        out: cmd.out,
    })?;
    eprintln!(
        "{} = {:.4} in {:.2}s",
        r.metric,
        r.mean,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => train(c),
        Command::Explain(c) => explain(c),
        Command::Bench(c) => bench(c),
        Command::Eval(c) => eval(c),
        Command::Inspect(c) => inspect(&c.model).and_then(|v| write_json(None, &v)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
