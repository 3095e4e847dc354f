//! Export directories: `manifest.json` plus one checkpoint file.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimator::{checkpoint_file_name, CannedModel, Checkpoint, Estimator, Metric, ModelDescription, ModelFn};
use crate::run_config::RunConfig;

pub const EXPORT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub format_version: u32,
    pub model_kind: String,
    pub n_features: usize,
    pub n_classes: Option<usize>,
    pub hidden_units: Option<Vec<usize>>,
    pub checkpoint: String,
    pub metrics: Vec<String>,
}

impl ExportManifest {
    pub fn description(&self) -> ModelDescription {
        ModelDescription {
            model_kind: self.model_kind.clone(),
            n_classes: self.n_classes,
            hidden_units: self.hidden_units.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportStrategy {
    pub export_dir: std::path::PathBuf,
    pub format_version: u32,
}

impl ExportStrategy {
    pub fn new(export_dir: impl Into<std::path::PathBuf>) -> Self {
        ExportStrategy {
            export_dir: export_dir.into(),
            format_version: EXPORT_FORMAT_VERSION,
        }
    }
}

/// Writes the estimator's checkpoint and a manifest describing it into `dir`.
pub fn export_model(estimator: &Estimator, dir: impl AsRef<Path>, metrics: &[Metric]) -> Result<ExportManifest> {
    let dir = dir.as_ref();
    let n_features = match (estimator.is_fitted(), estimator.n_features()) {
        (true, Some(n)) => n,
        _ => return Err(Error::State("cannot export an estimator without parameters".into())),
    };
    let desc = estimator.description();
    let manifest = ExportManifest {
        format_version: EXPORT_FORMAT_VERSION,
        model_kind: desc.model_kind,
        n_features,
        n_classes: desc.n_classes,
        hidden_units: desc.hidden_units,
        checkpoint: checkpoint_file_name(estimator.global_step()),
        metrics: metrics.iter().map(|m| m.name().to_string()).collect(),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    estimator.save_checkpoint(dir.join(&manifest.checkpoint))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ExportManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Config(format!("{}: missing format_version", path.display())))?;
    if version != u64::from(EXPORT_FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: EXPORT_FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads an export of a canned estimator.
pub fn load_export(dir: impl AsRef<Path>) -> Result<(Estimator, ExportManifest)> {
    let manifest = read_manifest(&dir)?;
    let model = CannedModel::from_description(&manifest.description())?;
    load_with(dir.as_ref(), manifest, Arc::new(model))
}

/// Loads an export whose model function the caller supplies.
pub fn load_export_with(dir: impl AsRef<Path>, model_fn: Arc<dyn ModelFn>) -> Result<(Estimator, ExportManifest)> {
    let manifest = read_manifest(&dir)?;
    load_with(dir.as_ref(), manifest, model_fn)
}

fn load_with(dir: &Path, manifest: ExportManifest, model_fn: Arc<dyn ModelFn>) -> Result<(Estimator, ExportManifest)> {
    let mut estimator = Estimator::initialized(model_fn, manifest.n_features, RunConfig::default())?;
    estimator.restore(Checkpoint::load(dir.join(&manifest.checkpoint))?)?;
    Ok((estimator, manifest))
}
