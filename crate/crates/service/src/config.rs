use std::path::{Path, PathBuf};

use pprl_core::{
    parse_instant, BudgetDims, Instant, Level, NoiseParams, PrivacyParams, Secret, TimeHierarchy,
};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable holding the hex-encoded noise secret.
pub const SECRET_ENV: &str = "PPRL_SECRET_HEX";
/// Shortest secret the service accepts, in bytes.
pub const MIN_SECRET_BYTES: usize = 32;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("no secret: set {SECRET_ENV} or `secret_file` in the config")]
    MissingSecret,
    #[error("secret must be hex-encoded")]
    SecretHex,
    #[error("secret must be at least {MIN_SECRET_BYTES} bytes, got {0}")]
    SecretTooShort(usize),
    #[error("invalid `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

/// Service settings, read from TOML or JSON. Keys accept snake_case or camelCase.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub epsilon: f64,
    pub tau: u64,
    pub l: usize,
    pub hierarchy: TimeHierarchy,
    #[serde(alias = "noisyTotals")]
    pub noisy_totals: bool,
    #[serde(alias = "budgetDims")]
    pub budget: BudgetDims,
    #[serde(alias = "adminToken")]
    pub admin_token: Option<String>,
    /// Honour the `X-Test-Now` header.
    #[serde(alias = "testMode")]
    pub test_mode: bool,
    /// Fixed server clock (RFC 3339); the system clock when absent.
    pub now: Option<String>,
    /// File holding the hex secret, used when the environment variable is unset.
    #[serde(alias = "secretFile")]
    pub secret_file: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub listen: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            tau: 0,
            l: 0,
            hierarchy: TimeHierarchy::default(),
            noisy_totals: false,
            budget: BudgetDims {
                n_attr: 6,
                n_time: 3,
                n_ent: 2,
            },
            admin_token: None,
            test_mode: false,
            now: None,
            secret_file: None,
            snapshot: None,
            listen: None,
        }
    }
}

impl ServiceConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(ConfigError::Field {
                field: "epsilon",
                message: "must be a positive finite number".into(),
            });
        }
        self.budget.validate().map_err(|e| ConfigError::Field {
            field: "budget",
            message: e.to_string(),
        })?;
        self.fixed_now()?;
        Ok(())
    }

    pub fn fixed_now(&self) -> Result<Option<Instant>, ConfigError> {
        self.now
            .as_deref()
            .map(parse_instant)
            .transpose()
            .map_err(|e| ConfigError::Field {
                field: "now",
                message: e.to_string(),
            })
    }

    /// Secret from the environment, else from `secret_file`.
    pub fn load_secret(&self) -> Result<Secret, ConfigError> {
        let hex_text = match std::env::var(SECRET_ENV) {
            Ok(v) if !v.trim().is_empty() => v,
            _ => match &self.secret_file {
                Some(path) => std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?,
                None => return Err(ConfigError::MissingSecret),
            },
        };
        secret_from_hex(hex_text.trim())
    }

    pub fn privacy_params(&self, secret: Secret) -> Result<PrivacyParams, ConfigError> {
        let noise = NoiseParams::new(secret, self.epsilon).map_err(|e| ConfigError::Field {
            field: "epsilon",
            message: e.to_string(),
        })?;
        Ok(PrivacyParams::new(noise, self.hierarchy.clone())
            .with_tau(self.tau)
            .with_l(self.l)
            .with_noisy_totals(self.noisy_totals))
    }

    pub fn finest(&self) -> Level {
        self.hierarchy.finest()
    }
}

pub fn secret_from_hex(hex_text: &str) -> Result<Secret, ConfigError> {
    let secret = Secret::from_hex(hex_text).map_err(|_| ConfigError::SecretHex)?;
    if secret.len() < MIN_SECRET_BYTES {
        return Err(ConfigError::SecretTooShort(secret.len()));
    }
    Ok(secret)
}
