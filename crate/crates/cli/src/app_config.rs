//! Service and batch configuration file (TOML).
//!
//! ```toml
//! puzzle = "puzzles/pilot.toml"   # optional, defaults to the bundled set
//! log_dir = "logs"
//! static_dir = "webui/dist"       # optional
//! heartbeat_secs = 15
//!
//! [endpoints.local]
//! base_url = "http://127.0.0.1:8000/v1"
//! api_key_env = "LOCAL_LLM_KEY"
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cgbench_agents::EndpointConfig;
use cgbench_core::catalog::{load_puzzle, Puzzle};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid puzzle file {path}: {message}")]
    Puzzle { path: PathBuf, message: String },
}

fn default_log_dir() -> PathBuf {
    PathBuf::from("logs")
}

fn default_heartbeat() -> u64 {
    15
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub puzzle: Option<PathBuf>,
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_secs: u64,
    /// fsync each log record.
    #[serde(default = "yes")]
    pub durable_logs: bool,
    #[serde(default)]
    pub endpoints: BTreeMap<String, EndpointConfig>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            puzzle: None,
            log_dir: default_log_dir(),
            static_dir: None,
            heartbeat_secs: default_heartbeat(),
            durable_logs: true,
            endpoints: BTreeMap::new(),
        }
    }
}

impl AppConfig {
    pub fn parse(text: &str, base: &Path) -> Result<AppConfig, toml::de::Error> {
        let mut c: AppConfig = toml::from_str(text)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        c.puzzle.as_mut().map(resolve);
        c.static_dir.as_mut().map(resolve);
        resolve(&mut c.log_dir);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<AppConfig, AppConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        AppConfig::parse(&text, base).map_err(|e| AppConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// The configured puzzle, or the bundled one.
    pub fn load_puzzle(&self) -> Result<Puzzle, AppConfigError> {
        let Some(path) = &self.puzzle else { return Ok(Puzzle::default_bundled()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppConfigError::Read { path: path.clone(), message: e.to_string() })?;
        load_puzzle(&text).map_err(|e| AppConfigError::Puzzle { path: path.clone(), message: e.to_string() })
    }

    /// Label written into session configs as the trial set reference.
    pub fn trial_set_ref(&self) -> String {
        match &self.puzzle {
            Some(p) => format!("file:{}", p.display()),
            None => "bundled:default".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let c = AppConfig::parse(
            "puzzle = \"p.toml\"\nlog_dir = \"/abs/logs\"\n[endpoints.local]\nbase_url = \"http://x/v1\"\napi_key_env = \"K\"\n",
            Path::new("/etc/cg"),
        )
        .unwrap();
        assert_eq!(c.puzzle.as_deref(), Some(Path::new("/etc/cg/p.toml")));
        assert_eq!(c.log_dir, Path::new("/abs/logs"));
        assert_eq!(c.endpoints["local"].api_key_env.as_deref(), Some("K"));
        assert!(c.durable_logs);
    }

    #[test]
    fn missing_puzzle_names_the_path() {
        let c = AppConfig { puzzle: Some("/nowhere/trials.toml".into()), ..AppConfig::default() };
        let err = c.load_puzzle().unwrap_err().to_string();
        assert!(err.contains("/nowhere/trials.toml"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::parse("prot = 3", Path::new(".")).is_err());
    }
}
