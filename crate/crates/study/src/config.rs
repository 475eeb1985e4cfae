//! Study configuration: roster, arms, backends, runner policy, analysis and
//! service settings. Read from TOML; CLI flags override individual fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use telesim_core::demo;
use telesim_core::session::Arm;
use telesim_core::talker::RemoteConfig;
use thiserror::Error;

use crate::analyze::AnalysisConfig;
use crate::plan::ReplicationSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where an arm's talker comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// The store's script for the arm: the generic talker for both co-clinician
    /// arms, the comparator script, or the case's clinician script.
    Scripted,
    /// A talker script file used for every scenario.
    ScriptFile { path: PathBuf },
    Remote {
        endpoint: String,
        #[serde(default = "default_remote_timeout")]
        timeout_ms: u64,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    /// Wait for a live session on the service to fulfil the encounter.
    Live {
        #[serde(default = "default_live_timeout")]
        timeout_s: u64,
    },
}

fn default_remote_timeout() -> u64 {
    30_000
}

fn default_live_timeout() -> u64 {
    3_600
}

impl BackendConfig {
    pub fn remote(&self, arm: Arm) -> Option<RemoteConfig> {
        match self {
            Self::Remote {
                endpoint,
                timeout_ms,
                api_key_env,
            } => Some(RemoteConfig {
                name: format!("remote-{arm}"),
                endpoint: endpoint.clone(),
                timeout_ms: *timeout_ms,
                api_key_env: api_key_env.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Advance each live session's clock by the batch pacing instead of
    /// reading wall time, so live traces match batch traces exactly.
    pub stepped_clock: bool,
    /// Real delay between streamed talker chunks.
    pub chunk_delay_ms: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8787".into(),
            stepped_clock: false,
            chunk_delay_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub scenarios: Vec<String>,
    /// Extra cases laid out like the bundled data directory.
    pub scenario_dir: Option<PathBuf>,
    pub actors: Vec<String>,
    pub replication: ReplicationSpec,
    pub arms: Vec<Arm>,
    pub max_turns: u32,
    pub max_duration_ms: u64,
    pub barge_in_grace: u32,
    /// Chance that an actor withholds a given fact on the first request.
    /// Drawn once per (actor, scenario), shared by all four arms.
    pub hesitancy: f64,
    /// Extra attempts after a failed encounter.
    pub retries: u32,
    /// Abort the study once more than this fraction of encounters fail.
    pub max_failure_fraction: f64,
    /// Keyed by arm name; arms not listed use [`BackendConfig::Scripted`].
    pub backends: BTreeMap<String, BackendConfig>,
    pub analysis: AnalysisConfig,
    pub serve: ServeConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenarios: demo::CASES.iter().map(|c| c.id.to_owned()).collect(),
            scenario_dir: None,
            actors: (1..=4).map(|i| format!("actor_{i:02}")).collect(),
            replication: ReplicationSpec::Count(3),
            arms: Arm::ALL.to_vec(),
            max_turns: 60,
            max_duration_ms: demo::DEMO_MAX_DURATION_MS,
            barge_in_grace: 1,
            hesitancy: 0.25,
            retries: 1,
            max_failure_fraction: 0.1,
            backends: BTreeMap::new(),
            analysis: AnalysisConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{name} must be in [0, 1], got {v}"
                )))
            }
        };
        fraction("hesitancy", self.hesitancy)?;
        fraction("max_failure_fraction", self.max_failure_fraction)?;
        if self.max_duration_ms == 0 {
            return Err(ConfigError::Invalid(
                "max_duration_ms must be positive".into(),
            ));
        }
        for name in self.backends.keys() {
            name.parse::<Arm>().map_err(ConfigError::Invalid)?;
        }
        self.analysis.validate().map_err(ConfigError::Invalid)
    }

    pub fn backend(&self, arm: Arm) -> BackendConfig {
        self.backends
            .get(arm.as_str())
            .cloned()
            .unwrap_or(BackendConfig::Scripted)
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
