use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::dataset::ModelSpec;
use crate::router::RouterModel;

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    256
}

/// Gateway settings. TOML form:
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// checkpoint = "router.ckpt"
/// timeout_ms = 30000            # optional
/// max_in_flight = 256           # optional
/// fallback_model = "m0"         # optional
/// routing_log = "routes.jsonl"  # optional
///
/// [[models]]
/// id = "m0"
/// endpoint = "http://127.0.0.1:9000/generate"
/// ```
///
/// Relative paths resolve against the config file's directory when loaded
/// with [`GatewayConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub checkpoint: PathBuf,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub fallback_model: Option<String>,
    #[serde(default)]
    pub routing_log: Option<PathBuf>,
    pub models: Vec<ModelSpec>,
}

impl GatewayConfig {
    pub fn new(listen: SocketAddr, checkpoint: impl Into<PathBuf>, models: Vec<ModelSpec>) -> Self {
        Self {
            listen,
            checkpoint: checkpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            fallback_model: None,
            routing_log: None,
            models,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        let config: Self = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            if config.checkpoint.is_relative() {
                config.checkpoint = dir.join(&config.checkpoint);
            }
            if let Some(log) = config.routing_log.as_mut().filter(|l| l.is_relative()) {
                *log = dir.join(&*log);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        let endpoints = self.endpoints();
        if let Some(f) = &self.fallback_model {
            if !endpoints.contains_key(f) {
                return Err(GatewayError::Config(format!(
                    "fallback model \"{f}\" has no endpoint"
                )));
            }
        }
        for m in &self.models {
            if let Some(e) = &m.endpoint {
                reqwest::Url::parse(e)
                    .map_err(|err| GatewayError::Config(format!("endpoint for \"{}\": {err}", m.model_id)))?;
            }
        }
        Ok(())
    }

    /// model id → endpoint for every configured model that has one.
    pub fn endpoints(&self) -> HashMap<String, String> {
        self.models
            .iter()
            .filter_map(|m| m.endpoint.clone().map(|e| (m.model_id.clone(), e)))
            .collect()
    }

    /// Endpoint for every model the router can pick, in registry order.
    /// Configured endpoints win over those stored in the checkpoint.
    pub(crate) fn resolve_endpoints(&self, model: &RouterModel) -> Result<Vec<String>, GatewayError> {
        let configured = self.endpoints();
        model
            .registry()
            .models()
            .iter()
            .map(|m| {
                configured
                    .get(&m.model_id)
                    .cloned()
                    .or_else(|| m.endpoint.clone())
                    .ok_or_else(|| GatewayError::Config(format!("model \"{}\" has no endpoint", m.model_id)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let c = GatewayConfig::from_toml_str(
            r#"
listen = "127.0.0.1:0"
checkpoint = "r.ckpt"

[[models]]
id = "a"
endpoint = "http://127.0.0.1:1/"
"#,
        )
        .unwrap();
        assert_eq!(c.timeout_ms, 30_000);
        assert_eq!(c.max_in_flight, 256);
        assert_eq!(c.endpoints()["a"], "http://127.0.0.1:1/");
    }

    #[test]
    fn rejects_bad_settings() {
        let base = "listen = \"127.0.0.1:0\"\ncheckpoint = \"r\"\n";
        let zero = format!("{base}timeout_ms = 0\nmodels = []\n");
        assert!(GatewayConfig::from_toml_str(&zero).is_err());
        let fallback = format!("{base}fallback_model = \"x\"\nmodels = []\n");
        assert!(GatewayConfig::from_toml_str(&fallback).is_err());
        let url = format!("{base}[[models]]\nid = \"a\"\nendpoint = \"not a url\"\n");
        assert!(GatewayConfig::from_toml_str(&url).is_err());
        let unknown = format!("{base}bogus = 1\nmodels = []\n");
        assert!(GatewayConfig::from_toml_str(&unknown).is_err());
    }
}
