use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::audit::{self, PhenotypeUse};
use super::dataset::MultiViewDataset;
use super::head::LinearHead;
use super::metrics::{compute_metrics, MetricsReport};
use super::scale::DatasetScaler;
use crate::error::{Error, Result};
use crate::mvvae::{train, MvvaeConfig, MvvaeModel, TrainConfig, TrainHistory};
use crate::neuralnet::HiddenActivation;

/// Architecture knobs shared by every view's networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    /// Affine layers per encoder/decoder network.
    pub layers: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub kl_weight: f64,
    pub hidden_activation: HiddenActivation,
    pub include_prior_expert: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 2,
            latent_dim: 8,
            hidden: 32,
            kl_weight: 1.0,
            hidden_activation: HiddenActivation::Relu,
            include_prior_expert: false,
        }
    }
}

impl ModelShape {
    pub fn model_config(&self, view_names: Vec<String>, view_dims: Vec<usize>) -> Result<MvvaeConfig> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        let mut cfg = MvvaeConfig::uniform(view_names, view_dims, self.latent_dim, self.layers, self.hidden);
        cfg.kl_weight = self.kl_weight;
        cfg.hidden_activation = self.hidden_activation;
        cfg.include_prior_expert = self.include_prior_expert;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelShape,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: MvvaeModel,
    pub scaler: DatasetScaler,
    pub head: LinearHead,
    pub history: TrainHistory,
    pub train_metrics: MetricsReport,
    pub test: Evaluation,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub subject_ids: Vec<String>,
    pub predictions: Vec<f64>,
    /// Subjects left with no view after dropping, hence not scored.
    pub skipped: Vec<String>,
}

/// Fits scaling on `train_raw`, trains the model, fits the head on the
/// training latents and scores the test set. Test phenotypes are read only
/// by the final scoring step.
pub fn run_experiment(
    train_raw: &MultiViewDataset,
    test_raw: &MultiViewDataset,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    let scaler = DatasetScaler::fit(train_raw)?;
    let train_set = scaler.transform(train_raw)?;
    let model_cfg = cfg
        .model
        .model_config(train_raw.view_names(), train_raw.view_dims())?;
    let model = MvvaeModel::new(model_cfg, cfg.train.seed)?;
    let (model, history) = train(model, &train_set, &cfg.train)?;

    let z_train = model.extract_latents(&train_set.full_batch())?;
    audit::record(PhenotypeUse::Fit, &train_set.subject_ids);
    let head = LinearHead::fit(&z_train, &train_set.phenotype)?;
    let train_metrics = compute_metrics(&train_set.phenotype, &head.predict(&z_train)?)?;

    let test = evaluate(&model, &scaler, &head, test_raw, &[])?;
    Ok(ExperimentOutcome {
        model,
        scaler,
        head,
        history,
        train_metrics,
        test,
    })
}

/// Latents for every subject that still has a view once `drop_views` are
/// masked out; returns the kept row indices with the latent matrix.
pub fn latents_with_dropped(
    model: &MvvaeModel,
    scaler: &DatasetScaler,
    ds_raw: &MultiViewDataset,
    drop_views: &[usize],
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    if let Some(&m) = drop_views.iter().find(|&&m| m >= ds_raw.n_views()) {
        return Err(Error::invalid(format!("cannot drop view {m}: dataset has {} views", ds_raw.n_views())));
    }
    let scaled = scaler.transform(ds_raw)?;
    let mut batch = scaled.full_batch();
    for &m in drop_views {
        batch.drop_view(m);
    }
    let kept: Vec<usize> = (0..batch.len())
        .filter(|&i| batch.mask[i].iter().any(|&b| b))
        .collect();
    if kept.is_empty() {
        return Err(Error::data("no subject has a view left after dropping"));
    }
    let batch = super::dataset::MultiViewBatch {
        views: batch.views.iter().map(|v| v.select_rows(&kept)).collect(),
        mask: kept.iter().map(|&i| batch.mask[i].clone()).collect(),
    };
    Ok((kept, model.extract_latents(&batch)?))
}

/// Predictions and metrics on `ds_raw` with the listed views treated as missing.
pub fn evaluate(
    model: &MvvaeModel,
    scaler: &DatasetScaler,
    head: &LinearHead,
    ds_raw: &MultiViewDataset,
    drop_views: &[usize],
) -> Result<Evaluation> {
    let (kept, z) = latents_with_dropped(model, scaler, ds_raw, drop_views)?;
    let predictions = head.predict(&z)?;
    let subject_ids: Vec<String> = kept.iter().map(|&i| ds_raw.subject_ids[i].clone()).collect();
    let truth: Vec<f64> = kept.iter().map(|&i| ds_raw.phenotype[i]).collect();
    audit::record(PhenotypeUse::Evaluate, &subject_ids);
    let metrics = compute_metrics(&truth, &predictions)?;
    let skipped = (0..ds_raw.len())
        .filter(|i| kept.binary_search(i).is_err())
        .map(|i| ds_raw.subject_ids[i].clone())
        .collect();
    Ok(Evaluation {
        metrics,
        subject_ids,
        predictions,
        skipped,
    })
}
