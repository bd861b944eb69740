//! The optional `--config` TOML file.
//!
//! ```toml
//! [datasets.mydata]          # added to, or replacing, the bundled entries
//! metric = "anls"
//! context_budget = 512
//! target_budget = 16
//! anls_tau = 0.5
//!
//! [endpoint]
//! url = "http://localhost:8080/generate"
//! timeout_ms = 30000
//! retries = 3
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use docqa::datasets::{DatasetConfig, DatasetRegistry};
use docqa::llmclient::EndpointConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    datasets: BTreeMap<String, DatasetConfig>,
    endpoint: Option<EndpointConfig>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub registry: DatasetRegistry,
    pub endpoint: Option<EndpointConfig>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let file = match path {
            None => ConfigFile::default(),
            Some(p) => {
                let src = fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&src)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
        };
        let mut registry = DatasetRegistry::bundled();
        for (name, mut cfg) in file.datasets {
            cfg.name = name.clone();
            cfg.validate()?;
            registry.datasets.insert(name, cfg);
        }
        Ok(Self {
            registry,
            endpoint: file.endpoint,
        })
    }

    pub fn dataset(&self, name: &str) -> CliResult<&DatasetConfig> {
        Ok(self.registry.get(name)?)
    }
}
