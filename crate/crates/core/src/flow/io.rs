use std::path::{Path, PathBuf};

use serde_json::json;

use super::{FlowConfig, FlowError, FlowField};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::util::config_hash;

const FLOW_VARIANT: &str = "flow";

/// Caches a flow sequence in the checkpoint container format.
pub fn save_flow_file(path: &Path, field: &FlowField, cfg: &FlowConfig) -> Result<(), FlowError> {
    let meta = json!({ "interval": field.interval, "config": cfg });
    save_checkpoint(
        path,
        FLOW_VARIANT,
        &config_hash(cfg),
        field.interval as u64,
        meta,
        &[("flow", &field.flows)],
    )?;
    Ok(())
}

/// Reads a cached flow sequence. The cache must have been produced with the
/// same flow configuration.
pub fn load_flow_file(path: &Path, cfg: &FlowConfig) -> Result<FlowField, FlowError> {
    let (header, mut tensors) = load_checkpoint(path, Some(FLOW_VARIANT))?;
    if header.config_hash != config_hash(cfg) {
        return Err(FlowError::Config(format!(
            "flow cache {} was computed with a different flow configuration",
            path.display()
        )));
    }
    let (name, flows) = tensors
        .pop()
        .ok_or_else(|| FlowError::Config(format!("flow cache {} holds no tensor", path.display())))?;
    if name != "flow" || flows.shape().len() != 4 {
        return Err(FlowError::Config(format!("flow cache {} has unexpected tensor `{name}`", path.display())));
    }
    Ok(FlowField {
        flows,
        interval: header.step as usize,
        valid: None,
    })
}

/// Where the cached flow of a clip at `interval` lives: next to the clip.
pub fn flow_cache_path(clip: &Path, interval: usize) -> PathBuf {
    let mut name = clip.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".k{interval}.flow"));
    clip.with_file_name(name)
}
