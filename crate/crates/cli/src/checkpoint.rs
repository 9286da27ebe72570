//! Versioned network checkpoints: a JSON tensor dump with a dimension
//! header. The loader validates the version and the dimension table before
//! handing the parameters out.

use std::fs;
use std::path::Path;

use riskplan_core::trtp::{NetDims, NetParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    dims: NetDims,
    params: NetParams,
}

pub fn save_checkpoint(path: &Path, params: &NetParams) -> Result<(), CliError> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        dims: params.dims,
        params: params.clone(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| CliError::Runtime(format!("encoding checkpoint: {e}")))?;
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<NetParams, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CliError::Config(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    if file.params.dims != file.dims {
        return Err(CliError::Config(
            "checkpoint dimension header disagrees with tensors".into(),
        ));
    }
    file.params
        .validate()
        .map_err(|e| CliError::Config(format!("checkpoint tensors: {e}")))?;
    Ok(file.params)
}
