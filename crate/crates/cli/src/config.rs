use std::path::{Path, PathBuf};
use std::sync::Arc;

use capaplan_core::llm::{HttpProvider, HttpProviderConfig, LlmProvider, ScriptedProvider};
use capaplan_core::solver::SolverConfig;
use capaplan_core::workflow::WorkflowConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Service configuration file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Model document (JSON form) the store is loaded from.
    pub store_path: PathBuf,
    /// Write the materialized model back to `store_path` after every change.
    #[serde(default)]
    pub persist: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    pub provider: ProviderConfig,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_max_horizon")]
    pub max_horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted { scripts: Vec<PathBuf> },
    Http(HttpProviderConfig),
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_max_iterations() -> usize {
    WorkflowConfig::default().max_iterations
}

fn default_max_horizon() -> usize {
    WorkflowConfig::default().max_horizon
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ServiceConfig =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.store_path = base.join(&config.store_path);
        if let ProviderConfig::Scripted { scripts } = &mut config.provider {
            for s in scripts.iter_mut() {
                *s = base.join(&*s);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.max_iterations == 0 || self.max_horizon == 0 {
            return Err(ServiceError::Config("max_iterations and max_horizon must be positive".into()));
        }
        if self.solver.timeout_ms == 0 {
            return Err(ServiceError::Config("solver timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn workflow(&self) -> WorkflowConfig {
        WorkflowConfig {
            max_iterations: self.max_iterations,
            max_horizon: self.max_horizon,
            solver: self.solver.clone().with_env_override(),
        }
    }

    pub fn build_provider(&self) -> Result<Arc<dyn LlmProvider>, ServiceError> {
        let provider: Arc<dyn LlmProvider> = match &self.provider {
            ProviderConfig::Scripted { scripts } => {
                Arc::new(ScriptedProvider::from_files(scripts).map_err(|e| ServiceError::Config(e.to_string()))?)
            }
            ProviderConfig::Http(c) => {
                Arc::new(HttpProvider::new(c.clone()).map_err(|e| ServiceError::Config(e.to_string()))?)
            }
        };
        Ok(provider)
    }
}
