use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TOL;
use crate::diffcore::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::error::{contract, Result};
use crate::geometry::FeatureSchema;

use super::loss::{total_loss, BatchTargets, LossSpec, LossWeights, StabilityMode};
use super::model::{default_hidden, MetaEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub k: usize,
    /// Target sparsity; `None` keeps every input feature (`alpha = m`).
    pub alpha: Option<usize>,
    pub weights: LossWeights,
    pub stability_mode: StabilityMode,
    pub probe_norm: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub ramp_epochs: usize,
    pub finetune_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub hidden: Option<[usize; 2]>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: 8,
            alpha: None,
            weights: LossWeights::default(),
            stability_mode: StabilityMode::Jacobian,
            probe_norm: TOL.probe_norm,
            learning_rate: AdamConfig::default().lr,
            batch_size: 128,
            pretrain_epochs: 10,
            ramp_epochs: 10,
            finetune_epochs: 40,
            patience: 20,
            val_fraction: 0.1,
            hidden: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Ramp,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub alpha: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MetaEncoder,
    pub history: Vec<EpochRecord>,
}

/// Effective sparsity for ramp epoch `e` (0-based) of `ramp` epochs,
/// moving linearly from `m` to `alpha` and rounded to the nearest integer.
pub fn ramp_alpha(m: usize, alpha: usize, e: usize, ramp: usize) -> usize {
    let frac = (e + 1) as f64 / ramp as f64;
    let a = m as f64 - (m - alpha) as f64 * frac;
    (a.round() as usize).clamp(alpha, m)
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), c], data).expect("row selection")
}

/// Splits `idx` into chunks of `size`, folding a trailing chunk of fewer
/// than two rows into its predecessor (KL terms need pairs).
fn chunk_batches(idx: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = idx.chunks(size.max(2)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(0, Vec::len) < 2 {
        let tail = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(tail);
        }
    }
    out
}

struct Batch {
    x: Tensor,
    targets: BatchTargets,
}

fn make_batch(x: &Tensor, y: &Tensor, idx: &[usize], schema: &FeatureSchema) -> Result<Batch> {
    let xb = select_rows(x, idx);
    let yb = select_rows(y, idx);
    let targets = BatchTargets::new(&xb, &yb, schema)?;
    Ok(Batch { x: xb, targets })
}

/// Loss value and parameter gradients for one batch.
pub fn loss_and_grad(
    params: &[Tensor],
    x: &Tensor,
    targets: &BatchTargets,
    spec: &LossSpec,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let parts = total_loss(&mut g, &vars, x, targets, spec)?;
    let value = g.value(parts.total).data()[0];
    let grads = g.backward(parts.total, &vars)?;
    Ok((value, grads))
}

fn loss_value(params: &[Tensor], batch: &Batch, spec: &LossSpec) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let parts = total_loss(&mut g, &vars, &batch.x, &batch.targets, spec)?;
    Ok(g.value(parts.total).data()[0])
}

fn mean_loss(params: &[Tensor], batches: &[Batch], spec: &LossSpec) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0;
    for b in batches {
        let n = b.x.shape()[0];
        total += loss_value(params, b, spec)? * n as f64;
        rows += n;
    }
    Ok(total / rows as f64)
}

/// Trains a meta-encoder on inputs `x: [n, m]` and black-box outputs
/// `y: [n, c]` in three phases: dense pretraining, a linear sparsity ramp and
/// finetuning at the target sparsity with early stopping. The returned
/// weights are those with the lowest validation loss seen while finetuning.
pub fn train(
    x: &Tensor,
    y: &Tensor,
    schema: &FeatureSchema,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    if x.rank() != 2 || x.shape()[0] == 0 {
        return contract("training set is empty");
    }
    let (n, m) = (x.shape()[0], x.shape()[1]);
    if y.rank() != 2 || y.shape()[0] != n {
        return contract(format!(
            "black-box outputs have {:?} rows, inputs have {}",
            y.shape().first(),
            n
        ));
    }
    if n < 2 {
        return contract("training needs at least two rows");
    }
    if schema.m != m {
        return contract(format!(
            "schema describes {} features, data has {}",
            schema.m, m
        ));
    }
    let alpha = cfg.alpha.unwrap_or(m);
    let hidden = cfg.hidden.unwrap_or_else(|| default_hidden(m));
    let mut model = MetaEncoder::new(m, cfg.k, alpha, hidden, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (cfg.val_fraction * n as f64).round() as usize;
    let (val_idx, train_idx) = if n_val >= 2 && n - n_val >= 2 {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    } else {
        (vec![], order.clone())
    };
    let val_batches = chunk_batches(&val_idx, cfg.batch_size)
        .iter()
        .map(|idx| make_batch(x, y, idx, schema))
        .collect::<Result<Vec<_>>>()?;

    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.params);
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut train_idx = train_idx;
    let total_epochs = cfg.pretrain_epochs + cfg.ramp_epochs + cfg.finetune_epochs;

    for epoch in 0..total_epochs {
        let (phase, a) = if epoch < cfg.pretrain_epochs {
            (Phase::Pretrain, m)
        } else if epoch < cfg.pretrain_epochs + cfg.ramp_epochs {
            let e = epoch - cfg.pretrain_epochs;
            (Phase::Ramp, ramp_alpha(m, alpha, e, cfg.ramp_epochs))
        } else {
            (Phase::Finetune, alpha)
        };
        let spec = LossSpec {
            m,
            k: cfg.k,
            alpha: a,
            weights: cfg.weights,
            mode: cfg.stability_mode,
            probe_norm: cfg.probe_norm,
        };
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in chunk_batches(&train_idx, cfg.batch_size) {
            let b = make_batch(x, y, &idx, schema)?;
            let (v, grads) = loss_and_grad(&model.params, &b.x, &b.targets, &spec)?;
            epoch_loss += v * idx.len() as f64;
            adam_step(&mut model.params, &grads, &mut state, &adam)?;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;

        let mut val_loss = None;
        if phase == Phase::Finetune {
            let v = if val_batches.is_empty() {
                train_loss
            } else {
                mean_loss(&model.params, &val_batches, &spec)?
            };
            val_loss = Some(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        log::debug!("epoch {epoch} {phase:?} alpha={a} train={train_loss:.6} val={val_loss:?}");
        history.push(EpochRecord {
            epoch,
            phase,
            alpha: a,
            train_loss,
            val_loss,
        });
        if phase == Phase::Finetune && since_best >= cfg.patience {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, history })
}
