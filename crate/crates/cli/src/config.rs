use std::path::Path;

use mvop_core::da::DaConfig;
use mvop_core::diagnostics::HoldoutConfig;
use mvop_core::mcem::McemConfig;
use mvop_core::tmvn::TmvnMethod;
use mvop_core::{MvopError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateSettings {
    pub impute_sweeps: usize,
    pub sampler: TmvnMethod,
}

impl Default for TranslateSettings {
    fn default() -> Self {
        Self {
            impute_sweeps: 100,
            sampler: TmvnMethod::Slice,
        }
    }
}

/// Run configuration file (TOML). Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub da: DaConfig,
    pub mcem: McemConfig,
    pub translate: TranslateSettings,
    pub holdout: Option<HoldoutConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| MvopError::validation(format!("{}: {e}", p.display())))
            }
        }
    }
}
