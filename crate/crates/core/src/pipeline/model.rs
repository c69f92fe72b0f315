use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{contract, Error, Result};
use crate::explain::{Explainer, LatentStore};
use crate::geometry::FeatureSchema;
use crate::metaenc::{train, EncoderFile, MetaEncoder, TrainingConfig};
use crate::surrogate::{
    LogisticConfig, LogisticSurrogate, Surrogate, TreeSurrogate, TREE_DEPTHS, TREE_MIN_LEAF,
};

use super::data::Preprocessor;

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Lr,
    Dt,
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::Lr => "lr",
            SurrogateKind::Dt => "dt",
        })
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(SurrogateKind::Lr),
            "dt" => Ok(SurrogateKind::Dt),
            other => contract(format!("unknown surrogate {other:?}")),
        }
    }
}

/// Trained encoder, surrogate and latent store, plus what is needed to
/// preprocess new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub format_version: u32,
    pub encoder: EncoderFile,
    pub surrogate: Surrogate,
    pub store: LatentStore,
    pub schema: FeatureSchema,
    pub feature_names: Vec<String>,
    pub preprocessor: Option<Preprocessor>,
    pub n_classes: usize,
    pub target_class: usize,
    pub split_seed: u64,
}

/// A loaded model with its encoder rebuilt.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub file: PipelineModel,
    pub encoder: MetaEncoder,
}

impl Pipeline {
    pub fn new(file: PipelineModel) -> Result<Self> {
        let encoder = file.encoder.to_model()?;
        Ok(Self { file, encoder })
    }

    pub fn explainer(&self) -> Explainer<'_> {
        Explainer::new(&self.encoder, &self.file.surrogate, &self.file.store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(&self.file)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PipelineModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format_version != PIPELINE_FORMAT_VERSION {
            return contract(format!(
                "unsupported pipeline format version {}",
                file.format_version
            ));
        }
        Self::new(file)
    }

    pub fn encode(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        crate::par::map_slice(x, |r| self.encoder.encode(r))
            .into_iter()
            .collect()
    }
}

/// Inputs and black-box outputs of the training rows.
pub struct TrainData<'a> {
    pub x: &'a [Vec<f64>],
    pub probs: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub schema: &'a FeatureSchema,
}

pub fn fit_surrogate(
    kind: SurrogateKind,
    z: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Surrogate> {
    Ok(match kind {
        SurrogateKind::Lr => Surrogate::Logistic(LogisticSurrogate::fit(
            z,
            labels,
            n_classes,
            &LogisticConfig::default(),
        )?),
        SurrogateKind::Dt => Surrogate::Tree(TreeSurrogate::fit_tuned(
            z,
            labels,
            n_classes,
            &TREE_DEPTHS,
            TREE_MIN_LEAF,
            seed,
        )?),
    })
}

/// Trains the encoder, fits the surrogate on the training latents and
/// freezes the latent store.
pub fn fit_pipeline(
    data: &TrainData<'_>,
    cfg: &TrainingConfig,
    kind: SurrogateKind,
) -> Result<Pipeline> {
    let x = Tensor::from_rows(data.x)?;
    let y = Tensor::from_rows(data.probs)?;
    let outcome = train(&x, &y, data.schema, cfg)?;
    let encoder = outcome.model;
    let z: Vec<Vec<f64>> = crate::par::map_slice(data.x, |r| encoder.encode(r))
        .into_iter()
        .collect::<Result<_>>()?;
    let surrogate = fit_surrogate(kind, &z, data.labels, data.n_classes, cfg.seed)?;
    let store = LatentStore::build(&encoder, &surrogate, data.x, data.labels)?;
    let target_class = super::blackbox::BlackBoxOutputs {
        probs: vec![],
        labels: data.labels.to_vec(),
        n_classes: data.n_classes,
    }
    .default_target();
    let file = PipelineModel {
        format_version: PIPELINE_FORMAT_VERSION,
        encoder: EncoderFile::new(&encoder, cfg),
        surrogate,
        store,
        schema: data.schema.clone(),
        feature_names: Vec::new(),
        preprocessor: None,
        n_classes: data.n_classes,
        target_class,
        split_seed: 0,
    };
    Ok(Pipeline { file, encoder })
}
