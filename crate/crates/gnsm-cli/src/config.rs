//! Run configuration: a single JSON file carrying model and training
//! settings. Every field has a default, so a config may specify only
//! overrides; unknown keys are rejected to catch typos.

use std::path::{Path, PathBuf};

use gnsm::error::{Error, Result};
use gnsm::network::ModelConfig;
use gnsm::schema::CategoricalSchema;
use gnsm::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming a directory searched when `--config` is a
/// bare file name rather than an existing path.
pub const CONFIG_DIR_ENV: &str = "GNSM_CONFIG_DIR";

/// Model settings as written in config files: `ModelConfig` minus
/// `input_dim` (derived from the schema at hand) plus the element type.
/// Defaults are the full-scale protocol; desk-scale runs override.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// "f32" (training speed) or "f64" (gradient checks).
    pub dtype: String,
    pub width: usize,
    pub n_blocks: usize,
    pub time_embedding_size: usize,
    pub n_scales: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Gaussian noise bounds for continuous features. Left unset they
    /// default to (0.1, 1.0) when the schema has continuous features.
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub fourier_scale: f64,
    pub leaky_slope: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let base = ModelConfig::new(1);
        ModelSettings {
            dtype: "f32".into(),
            width: base.width,
            n_blocks: base.n_blocks,
            time_embedding_size: base.time_embedding_size,
            n_scales: base.n_scales,
            lambda_min: base.lambda_min,
            lambda_max: base.lambda_max,
            sigma_min: base.sigma_min,
            sigma_max: base.sigma_max,
            fourier_scale: base.fourier_scale,
            leaky_slope: base.leaky_slope,
        }
    }
}

impl ModelSettings {
    /// Bind to a schema: fills `input_dim` and, when continuous features
    /// are present without explicit bounds, the default sigma range.
    pub fn to_model_config(&self, schema: &CategoricalSchema) -> Result<ModelConfig> {
        if self.dtype != "f32" && self.dtype != "f64" {
            return Err(Error::Validation(format!(
                "dtype must be \"f32\" or \"f64\", got {:?}",
                self.dtype
            )));
        }
        let (sigma_min, sigma_max) = match (self.sigma_min, self.sigma_max, schema.n_cont()) {
            (None, None, 0) => (None, None),
            (None, None, _) => (Some(0.1), Some(1.0)),
            (lo, hi, _) => (lo, hi),
        };
        let config = ModelConfig {
            width: self.width,
            n_blocks: self.n_blocks,
            time_embedding_size: self.time_embedding_size,
            input_dim: schema.input_dim(),
            n_scales: self.n_scales,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            sigma_min,
            sigma_max,
            fourier_scale: self.fourier_scale,
            leaky_slope: self.leaky_slope,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text + "\n")
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Ok(())
    }
}

/// Resolve a `--config` argument: an existing path wins; otherwise a bare
/// name (no separator) is searched in `$GNSM_CONFIG_DIR`, with and
/// without a `.json` extension.
pub fn resolve_config_path(arg: &Path) -> Result<PathBuf> {
    if arg.exists() {
        return Ok(arg.to_path_buf());
    }
    if arg.components().count() == 1 {
        if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
            let dir = PathBuf::from(dir);
            let bare = dir.join(arg);
            if bare.exists() {
                return Ok(bare);
            }
            let with_ext = dir.join(format!("{}.json", arg.display()));
            if with_ext.exists() {
                return Ok(with_ext);
            }
        }
    }
    Err(Error::Io(format!(
        "config file not found: {} (also searched ${CONFIG_DIR_ENV})",
        arg.display()
    )))
}
