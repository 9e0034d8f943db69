//! Service configuration: a JSON file with `WEM_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;
use crate::station::TariffSchedule;

pub const ENV_PREFIX: &str = "WEM_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// No directory means nothing survives a restart.
    #[serde(default)]
    pub storage_dir: Option<PathBuf>,
    #[serde(default)]
    pub tariff: TariffSchedule,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { listen: default_listen(), storage_dir: None, tariff: TariffSchedule::default() }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{var}: {detail}")]
    Env { var: String, detail: String },
    #[error(transparent)]
    Tariff(#[from] crate::station::TariffError),
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// File (or defaults) then process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let vars = std::env::vars_os().filter_map(|(k, v)| Some((k.into_string().ok()?, v.into_string().ok()?)));
        config.apply_env(vars)?;
        config.tariff.validate()?;
        Ok(config)
    }

    /// Applies `WEM_LISTEN`, `WEM_STORAGE_DIR` and `WEM_TARIFF_{NORMAL_RATE,PEAK_RATE,FIXED_CHARGE}`.
    /// Other variables, prefixed or not, are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let (key, value) = (key.as_ref(), value.as_ref());
            let Some(name) = key.strip_prefix(ENV_PREFIX) else { continue };
            let money = |v: &str| -> Result<Money, ConfigError> {
                v.parse().map_err(|e: crate::money::DecimalError| ConfigError::Env { var: key.into(), detail: e.to_string() })
            };
            match name {
                "LISTEN" => self.listen = value.into(),
                "STORAGE_DIR" => self.storage_dir = Some(value.into()),
                "TARIFF_NORMAL_RATE" => self.tariff.normal_rate = money(value)?,
                "TARIFF_PEAK_RATE" => self.tariff.peak_rate = money(value)?,
                "TARIFF_FIXED_CHARGE" => self.tariff.fixed_charge = money(value)?,
                _ => {}
            }
        }
        Ok(())
    }
}
