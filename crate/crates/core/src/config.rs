//! JSON experiment configuration consumed by the command-line front end.
//! Unknown keys are rejected; the full schema is documented in
//! `docs/config-schema.md`.

use serde::{Deserialize, Serialize};

use crate::alloop::ALConfig;
use crate::error::{Error, Result};
use crate::nnet::TrainConfig;
use crate::saliency::SaliencyMethod;
use crate::strategies::{StrategyId, UncertaintyAgg};
use crate::synthdata::DatasetSpec;

fn default_batch_size() -> usize {
    16
}

fn default_max_fraction() -> f64 {
    1.0
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_saliency() -> SaliencyMethod {
    SaliencyMethod::DeepTaylor
}

fn default_mc_samples() -> usize {
    20
}

fn default_k_clusters() -> usize {
    10
}

fn default_fine_tune_epochs() -> usize {
    20
}

fn default_ae_epochs() -> usize {
    60
}

fn default_dropout_p() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

/// Dataset switch: queries move to `dataset` once the labeled fraction
/// reaches `fraction`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub dataset: DatasetSpec,
    pub fraction: f64,
}

/// A multi-strategy experiment: each strategy runs the same seeds on the
/// same per-seed worlds, so cross-strategy comparisons are paired.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub strategies: Vec<StrategyId>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_target: Option<f64>,
    #[serde(default = "default_max_fraction")]
    pub max_fraction: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_saliency")]
    pub saliency: SaliencyMethod,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_fine_tune_epochs")]
    pub fine_tune_epochs: usize,
    #[serde(default)]
    pub retrain_scratch: bool,
    #[serde(default = "default_dropout_p")]
    pub dropout_p: f64,
    #[serde(default = "default_true")]
    pub variance_head: bool,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub uncertainty_agg: UncertaintyAgg,
    #[serde(default = "default_k_clusters")]
    pub k_clusters: usize,
    #[serde(default = "default_ae_epochs")]
    pub ae_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchSpec>,
    #[serde(default)]
    pub refresh_rf: bool,
    #[serde(default)]
    pub pseudo_labels: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::invalid("strategies", "need at least one strategy"));
        }
        // Delegate the rest to the per-strategy config.
        self.to_al_config(self.strategies[0]).validate()
    }

    /// Materialize the per-strategy engine config.
    pub fn to_al_config(&self, strategy: StrategyId) -> ALConfig {
        ALConfig {
            strategy,
            dataset: self.dataset.clone(),
            saliency: self.saliency,
            batch_size: self.batch_size,
            auc_target: self.auc_target,
            max_fraction: self.max_fraction,
            seeds: self.seeds.clone(),
            train: self.train.clone(),
            fine_tune_epochs: self.fine_tune_epochs,
            retrain_scratch: self.retrain_scratch,
            dropout_p: self.dropout_p,
            variance_head: self.variance_head,
            mc_samples: self.mc_samples,
            uncertainty_agg: self.uncertainty_agg,
            k_clusters: self.k_clusters,
            ae_epochs: self.ae_epochs,
            noise_sigma: self.noise_sigma,
            dataset_b: self.switch.as_ref().map(|s| s.dataset.clone()),
            switch_fraction: self.switch.as_ref().map(|s| s.fraction),
            refresh_rf: self.refresh_rf,
            pseudo_labels: self.pseudo_labels,
            stop_at_crossing: false,
        }
    }
}

/// Sweep configurations for `ideal sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub run: RunConfig,
    /// Batch sizes (kind = batch).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    /// Noise sigmas (kind = noise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    /// Saliency methods to compare (kind = saliency).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<SaliencyMethod>>,
}

/// Parse a JSON string into a config, rejecting unknown keys. Also accepts a
/// run manifest (re-run from its embedded config).
pub fn parse_run_config(json: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let config_value = if value.get("manifest_version").is_some() {
        value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Config("manifest lacks an embedded config".into()))?
    } else {
        value
    };
    let cfg: RunConfig = serde_json::from_value(config_value)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_sweep_config(json: &str) -> Result<SweepConfig> {
    let cfg: SweepConfig = serde_json::from_str(json)?;
    cfg.run.validate()?;
    Ok(cfg)
}
