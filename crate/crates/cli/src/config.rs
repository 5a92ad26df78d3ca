//! Flat run configuration: JSON file plus CLI overrides. Unknown keys are
//! rejected so typos in experiment grids fail fast.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use d2cl_core::eval::{InitialGraphConfig, SweepConfig};
use d2cl_core::model::{FeaturizerConfig, ModelConfig, TowerMode, TrainConfig};
use d2cl_core::sem::{FamilyTag, SimConfig, Target};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // dataset
    pub p: usize,
    pub n: usize,
    pub expected_parents: f64,
    pub family: String,
    pub snr: f64,
    pub pilot_n: usize,
    // split
    pub target: String,
    pub train_source_fraction: f64,
    pub seed: u64,
    // model
    pub tower: String,
    pub initial_graph: String,
    pub pearson_budget: usize,
    pub lasso_lambda: f64,
    pub grid_resolution: usize,
    pub max_label: u32,
    pub data_features: bool,
    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub negative_ratio: f64,
    pub validation_fraction: f64,
    // sweep grids
    pub families: Vec<String>,
    pub snr_grid: Vec<f64>,
    pub targets: Vec<String>,
    pub replicates: usize,
    pub workers: usize,
    pub label_perturb_rate: f64,
    pub kendall_baseline: bool,
    // evaluation
    pub threshold: Option<f64>,
    pub perturb_seed: u64,
    /// Long-running preset marker; requires --allow-long.
    pub long_running: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            p: 100,
            n: 512,
            expected_parents: 4.0,
            family: "linear".into(),
            snr: 10.0,
            pilot_n: 4096,
            target: "direct".into(),
            train_source_fraction: 0.6,
            seed: 7,
            tower: "dual".into(),
            initial_graph: "lasso".into(),
            pearson_budget: 5,
            lasso_lambda: 0.1,
            grid_resolution: 32,
            max_label: 10,
            data_features: true,
            epochs: 100,
            batch_size: 64,
            weight_decay: 1e-4,
            negative_ratio: 4.0,
            validation_fraction: 0.1,
            families: vec!["linear".into(), "tanh".into()],
            snr_grid: vec![10.0, 1.0, 0.1],
            targets: vec!["direct".into()],
            replicates: 5,
            workers: 1,
            label_perturb_rate: 0.0,
            kendall_baseline: false,
            threshold: None,
            perturb_seed: 1,
            long_running: false,
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        match name {
            "desk" => {}
            "desk-smoke" => {
                cfg.p = 24;
                cfg.n = 192;
                cfg.pilot_n = 512;
                cfg.epochs = 4;
                cfg.replicates = 1;
                cfg.families = vec!["linear".into()];
                cfg.snr_grid = vec![10.0];
            }
            "paper-sim" => {
                cfg.p = 1500;
                cfg.n = 1024;
                cfg.families = d2cl_core::sem::FamilyTag::ALL
                    .iter()
                    .map(|t| t.name().to_string())
                    .collect();
                cfg.snr_grid = vec![10.0, 6.0, 4.0, 2.0, 1.0, 0.75, 0.5, 0.25, 0.1];
                cfg.targets = vec!["direct".into(), "ancestral".into()];
                cfg.long_running = true;
            }
            other => {
                return Err(CliError::input(format!(
                    "unknown preset {:?} (expected desk, desk-smoke or paper-sim)",
                    other
                )))
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| CliError::missing(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::input(format!("config {}: {}", path.display(), e))
        })
    }

    pub fn family_tag(&self) -> Result<FamilyTag, CliError> {
        FamilyTag::from_str(&self.family).map_err(CliError::from_input_error)
    }

    pub fn target_tag(&self) -> Result<Target, CliError> {
        Target::from_str(&self.target).map_err(CliError::from_input_error)
    }

    pub fn tower_mode(&self) -> Result<TowerMode, CliError> {
        TowerMode::from_str(&self.tower).map_err(CliError::from_input_error)
    }

    pub fn initial_graph_config(&self) -> Result<InitialGraphConfig, CliError> {
        match self.initial_graph.as_str() {
            "pearson" => Ok(InitialGraphConfig::Pearson {
                per_node_budget: self.pearson_budget,
            }),
            "lasso" => Ok(InitialGraphConfig::Lasso {
                lambda: self.lasso_lambda,
            }),
            other => Err(CliError::input(format!(
                "unknown initial_graph {:?} (expected pearson or lasso)",
                other
            ))),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            p: self.p,
            n: self.n,
            expected_parents: self.expected_parents,
            family: self.family_tag()?,
            snr: self.snr,
            pilot_n: self.pilot_n,
            seed: self.seed,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let mut cfg = ModelConfig::desk(self.tower_mode()?, self.seed);
        cfg.featurizer = FeaturizerConfig {
            grid_resolution: self.grid_resolution,
            max_label: self.max_label,
            data_features: self.data_features,
            shuffle_seed: self.seed,
        };
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            negative_ratio: self.negative_ratio,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, CliError> {
        let families = self
            .families
            .iter()
            .map(|f| FamilyTag::from_str(f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::from_input_error)?;
        let targets = self
            .targets
            .iter()
            .map(|t| Target::from_str(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::from_input_error)?;
        Ok(SweepConfig {
            p: self.p,
            n: self.n,
            expected_parents: self.expected_parents,
            pilot_n: self.pilot_n,
            families,
            snr_grid: self.snr_grid.clone(),
            targets,
            replicates: self.replicates,
            base_seed: self.seed,
            train_source_fraction: self.train_source_fraction,
            tower_mode: self.tower_mode()?,
            initial_graph: self.initial_graph_config()?,
            train: self.train_config(),
            label_perturb_rate: self.label_perturb_rate,
            workers: self.workers,
            kendall_baseline: self.kendall_baseline,
        })
    }
}
