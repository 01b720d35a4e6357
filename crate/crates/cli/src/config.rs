//! Optional experiment manifest. Any key may be given; a flag on the command
//! line wins over the file, the file wins over the built-in default.

use std::path::Path;

use serde::Deserialize;

use crate::exit::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub sigma2: Option<f64>,
    pub gamma_db: Option<f64>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub tol_gap: Option<f64>,
    pub tol_feas: Option<f64>,
    pub max_iter: Option<usize>,
    pub encoding: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_drop_epoch: Option<usize>,
    pub lr_factor: Option<f64>,
    pub val_fraction: Option<f64>,
    pub weight_decay: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
    pub model_match: Option<String>,
    pub instances: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
