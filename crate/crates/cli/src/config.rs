//! Scenario and training configuration loading.
//!
//! Scenario documents are JSON matching `ScenarioConfig`; the `map` field
//! may be given inline or as a path to a separate map document (resolved
//! relative to the scenario file). Unknown fields are rejected.

use std::fs;
use std::path::Path;

use riskplan_core::sim::{MapConfig, PredictorChoice, ScenarioConfig};
use riskplan_core::trtp::NetDims;
use serde::{Deserialize, Serialize};

use crate::{checkpoint, sibling_path, CliError};

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))
}

/// Loads a scenario, resolving a map file reference and the neural
/// checkpoint when the scenario selects the `trtp_toy` predictor.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let mut value = read_json(path)?;

    // The map may be a path string instead of an inline document.
    if let Some(map_ref) = value.get("map").and_then(|m| m.as_str()) {
        let map_path = sibling_path(path, map_ref);
        let map_value = read_json(&map_path)?;
        let map: MapConfig = serde_json::from_value(map_value)
            .map_err(|e| CliError::Config(format!("map {}: {e}", map_path.display())))?;
        value["map"] = serde_json::to_value(&map)
            .map_err(|e| CliError::Config(format!("map re-encode: {e}")))?;
    }

    let mut cfg: ScenarioConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

    if cfg.ego.predictor == PredictorChoice::TrtpToy {
        let rel =
            cfg.ego.checkpoint.clone().ok_or_else(|| {
                CliError::Config("predictor trtp_toy requires ego.checkpoint".into())
            })?;
        let ckpt_path = sibling_path(path, &rel);
        cfg.trtp_params = Some(checkpoint::load_checkpoint(&ckpt_path)?);
    }
    Ok(cfg)
}

/// Toy-training configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub dims: NetDims,
    pub dataset_size: usize,
    pub holdout_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            dims: NetDims::default(),
            dataset_size: 160,
            holdout_size: 40,
            steps: 1200,
            learning_rate: 0.003,
        }
    }
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig, CliError> {
    let value = read_json(path)?;
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
