//! Supervisor configuration: a TOML file with one table per concern, then
//! environment overrides.
//!
//! ```toml
//! [filter]
//! length_threshold = 3000
//!
//! [policy]
//! deadline_ms = 30000
//! deterministic_purification = true
//!
//! [backend]
//! backend_name = "scripted-replay"
//! fixture = "fixtures/case_study.jsonl"
//!
//! [service]
//! data_dir = "sessions"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::RenderLimits;
use crate::decision::{BackendConfig, BackendError, DecisionPolicy};
use crate::filter::{FilterConfig, FilterConfigError};

pub const ENV_DATA_DIR: &str = "SUPERVISOR_DATA_DIR";
pub const ENV_BACKEND: &str = "SUPERVISOR_BACKEND";
pub const ENV_BACKEND_URL: &str = "SUPERVISOR_BACKEND_URL";
pub const ENV_BACKEND_KEY_ENV: &str = "SUPERVISOR_BACKEND_KEY_ENV";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error(transparent)]
    Filter(#[from] FilterConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("render limits must be positive")]
    Render,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Session logs go here; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub listen: String,
    /// Name of an environment variable holding a static bearer token.
    pub auth_token_env: Option<String>,
    /// New sessions are supervised unless they opt out.
    pub supervise: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: None, listen: "127.0.0.1:8787".to_string(), auth_token_env: None, supervise: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    pub filter: FilterConfig,
    pub render: RenderLimits,
    pub policy: DecisionPolicy,
    pub backend: BackendConfig,
    pub service: ServiceConfig,
}

impl SupervisorConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative fixture paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let (Some(fixture), Some(dir)) = (&cfg.backend.fixture, path.parent()) {
            if fixture.is_relative() {
                cfg.backend.fixture = Some(dir.join(fixture));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter.validate()?;
        let r = &self.render;
        if r.per_field_chars == 0 || r.thought_chars == 0 || r.obs_chars == 0 {
            return Err(ConfigError::Render);
        }
        Ok(())
    }

    /// Applies the `SUPERVISOR_*` variables from the process environment.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(dir) = lookup(ENV_DATA_DIR) {
            self.service.data_dir = Some(PathBuf::from(dir));
        }
        if let Some(name) = lookup(ENV_BACKEND) {
            self.backend.backend_name = name.parse()?;
        }
        if let Some(url) = lookup(ENV_BACKEND_URL) {
            self.backend.base_url = Some(url);
        }
        if let Some(var) = lookup(ENV_BACKEND_KEY_ENV) {
            self.backend.key_env = Some(var);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::decision::{BackendKind, FallbackMode};

    #[test]
    fn empty_file_is_defaults() {
        let cfg = SupervisorConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, SupervisorConfig::default());
        assert_eq!(cfg.filter.length_threshold, 3000);
        assert_eq!(cfg.policy.deadline_ms, 30_000);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
[filter]
length_threshold = 5000
noncritical_error_patterns = ["rate limited"]

[render]
local_window = 3

[policy]
fallback = "strict"
deterministic_purification = true

[backend]
backend_name = "scripted-replay"
fixture = "f.jsonl"

[service]
data_dir = "/tmp/s"
"#;
        let cfg = SupervisorConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.filter.length_threshold, 5000);
        assert_eq!(cfg.filter.loop_window, 4);
        assert_eq!(cfg.render.local_window, 3);
        assert_eq!(cfg.policy.fallback, FallbackMode::Strict);
        assert_eq!(cfg.backend.backend_name, BackendKind::ScriptedReplay);
        assert_eq!(cfg.service.data_dir.as_deref(), Some(Path::new("/tmp/s")));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(SupervisorConfig::from_toml("[filter]\nlength_treshold = 1", Path::new("x")).is_err());
        assert!(SupervisorConfig::from_toml("[filter]\nlength_threshold = 0", Path::new("x")).is_err());
        assert!(SupervisorConfig::from_toml("[filter]\nloop_min_repeats = 1", Path::new("x")).is_err());
    }

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> = [
            (ENV_DATA_DIR, "/data"),
            (ENV_BACKEND, "http-chat-completion"),
            (ENV_BACKEND_URL, "http://localhost:9"),
            (ENV_BACKEND_KEY_ENV, "MY_KEY"),
        ]
        .into();
        let mut cfg = SupervisorConfig::default();
        cfg.apply_env_from(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.service.data_dir.as_deref(), Some(Path::new("/data")));
        assert_eq!(cfg.backend.backend_name, BackendKind::HttpChatCompletion);
        assert_eq!(cfg.backend.base_url.as_deref(), Some("http://localhost:9"));
        assert_eq!(cfg.backend.key_env.as_deref(), Some("MY_KEY"));

        let mut cfg = SupervisorConfig::default();
        assert!(cfg.apply_env_from(|k| (k == ENV_BACKEND).then(|| "gpt".to_string())).is_err());
    }

    #[test]
    fn relative_fixture_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sup.toml");
        std::fs::write(&path, "[backend]\nbackend_name = \"scripted-replay\"\nfixture = \"f.jsonl\"\n").unwrap();
        let cfg = SupervisorConfig::load(&path).unwrap();
        assert_eq!(cfg.backend.fixture, Some(dir.path().join("f.jsonl")));
    }
}
