//! Service and CLI configuration, read from TOML.
//!
//! ```toml
//! data_dir = "data"
//! listen = "127.0.0.1:8080"
//! provider = "mock"            # or "http"
//! provider_url = "https://llm.example/complete"
//! provider_api_key_env = "REELTREE_PROVIDER_KEY"
//! cors_allow = ["http://localhost:5173"]
//!
//! [export]
//! encoder_cmd = "ffmpeg -y -f concat -safe 0 -i {concat} -c copy {output}"
//!
//! [backend]
//! url = "http://127.0.0.1:8188"
//! api_key_env = "GRAPH_SERVER_KEY"
//! graph_dir = "graphs"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{MockProvider, Provider, Templates};
use crate::engine::{Engine, EngineBuilder, EngineError};
use crate::ids::IdScheme;
use crate::store::Storage;
use crate::workflows::{load_registry, ExecutorSet, Registry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "http" => Ok(ProviderKind::Http),
            other => Err(format!("unknown provider {other:?} (expected mock or http)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Shell template with `{concat}`, `{audio}`, `{manifest}` and
    /// `{output}` placeholders; empty disables encoding.
    pub encoder_cmd: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Generation-server base URL; empty disables the executor.
    pub url: String,
    pub api_key_env: String,
    pub graph_dir: PathBuf,
    pub poll_interval_ms: u64,
    pub timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            api_key_env: "GRAPH_SERVER_KEY".into(),
            graph_dir: PathBuf::from("graphs"),
            poll_interval_ms: 500,
            timeout_ms: 600_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub listen: String,
    pub provider: ProviderKind,
    pub provider_url: String,
    pub provider_api_key_env: String,
    /// Registry file; the shipped baseline when absent.
    pub registry: Option<PathBuf>,
    /// Directory of `<role>.v<N>.txt` templates; the built-in set when absent.
    pub templates_dir: Option<PathBuf>,
    /// Seed for deterministic ids; random ids when absent.
    pub id_seed: Option<u64>,
    pub cors_allow: Vec<String>,
    /// Built frontend served under `/` when present.
    pub static_dir: Option<PathBuf>,
    /// Concurrent job runners (jobs of one project never run in parallel).
    pub parallelism: usize,
    pub fsync: bool,
    pub export: ExportConfig,
    pub backend: BackendConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            listen: "127.0.0.1:8080".into(),
            provider: ProviderKind::Mock,
            provider_url: String::new(),
            provider_api_key_env: "REELTREE_PROVIDER_KEY".into(),
            registry: None,
            templates_dir: None,
            id_seed: None,
            cors_allow: vec![],
            static_dir: None,
            parallelism: 1,
            fsync: true,
            export: ExportConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let c: Config = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.parallelism == 0 {
            return Err(EngineError::Config("parallelism must be at least 1".into()));
        }
        if self.provider == ProviderKind::Http && self.provider_url.trim().is_empty() {
            return Err(EngineError::Config("provider = \"http\" requires provider_url".into()));
        }
        Ok(())
    }

    pub fn id_scheme(&self) -> IdScheme {
        self.id_seed.map_or(IdScheme::Random, IdScheme::Seeded)
    }

    fn env(name: &str) -> Option<String> {
        std::env::var(name).ok().filter(|v| !v.is_empty())
    }

    pub fn load_registry(&self) -> Result<Registry, EngineError> {
        Ok(match &self.registry {
            Some(p) => load_registry(p)?,
            None => Registry::baseline(),
        })
    }

    pub fn provider(&self) -> Result<Arc<dyn Provider>, EngineError> {
        match self.provider {
            ProviderKind::Mock => Ok(Arc::new(MockProvider::new())),
            #[cfg(feature = "http")]
            ProviderKind::Http => Ok(Arc::new(crate::agents::HttpProvider::new(
                self.provider_url.clone(),
                Self::env(&self.provider_api_key_env),
            )?)),
            #[cfg(not(feature = "http"))]
            ProviderKind::Http => Err(EngineError::Config("built without the http feature".into())),
        }
    }

    pub fn executors(&self) -> Result<ExecutorSet, EngineError> {
        #[allow(unused_mut)]
        let mut set = ExecutorSet::with_mock();
        if !self.backend.url.trim().is_empty() {
            #[cfg(feature = "http")]
            {
                use crate::workflows::backend::{GraphServerConfig, GraphServerExecutor, GRAPH_SERVER_EXECUTOR};
                use std::time::Duration;
                let exec = GraphServerExecutor::new(GraphServerConfig {
                    url: self.backend.url.clone(),
                    api_key: Self::env(&self.backend.api_key_env),
                    graph_dir: self.backend.graph_dir.clone(),
                    poll_interval: Duration::from_millis(self.backend.poll_interval_ms),
                    timeout: Duration::from_millis(self.backend.timeout_ms),
                })?;
                set.insert(GRAPH_SERVER_EXECUTOR, Arc::new(exec));
            }
            #[cfg(not(feature = "http"))]
            return Err(EngineError::Config("built without the http feature".into()));
        }
        Ok(set)
    }

    /// An engine builder over `storage` configured from this file, for
    /// callers that still want to adjust it (e.g. the clock).
    pub fn engine_builder(&self, storage: Arc<dyn Storage>) -> Result<EngineBuilder, EngineError> {
        let templates = match &self.templates_dir {
            Some(d) => Templates::load_dir(d)?,
            None => Templates::builtin(),
        };
        Ok(Engine::builder(storage)
            .provider(self.provider()?)
            .templates(templates)
            .registry(self.load_registry()?)
            .executors(self.executors()?)
            .id_scheme(self.id_scheme())
            .encoder_cmd(Some(self.export.encoder_cmd.clone())))
    }

    pub fn build_engine(&self, storage: Arc<dyn Storage>) -> Result<Engine, EngineError> {
        self.engine_builder(storage)?.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        let c = Config::parse(
            "provider = \"mock\"\nid_seed = 7\n[export]\nencoder_cmd = \"true\"\n[backend]\nurl = \"http://h\"\n",
        )
        .unwrap();
        assert_eq!(c.id_scheme(), IdScheme::Seeded(7));
        assert_eq!(c.export.encoder_cmd, "true");
        assert_eq!(c.backend.url, "http://h");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Config::parse("provider = \"http\"").is_err());
        assert!(Config::parse("parallelism = 0").is_err());
        assert!(Config::parse("nonsense = 1").is_err());
        assert!(Config::parse("provider = \"llama\"").is_err());
    }
}
