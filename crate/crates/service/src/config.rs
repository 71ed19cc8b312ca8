use std::env;
use std::path::PathBuf;
use std::time::Duration;

use crate::error::ServiceError;

/// Service settings. Every field can come from the environment, see
/// [`ServiceConfig::from_env`].
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub model_path: Option<PathBuf>,
    pub blender_path: Option<PathBuf>,
    pub data_path: Option<PathBuf>,
    pub top_n: usize,
    pub max_turns: usize,
    /// Explanation keyphrases per response.
    pub explain_k: usize,
    pub idle_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: 8080,
            model_path: None,
            blender_path: None,
            data_path: None,
            top_n: 10,
            max_turns: 10,
            explain_k: 10,
            idle_timeout: Duration::from_secs(30 * 60),
        }
    }
}

fn parsed<T: std::str::FromStr>(
    lookup: &impl Fn(&str) -> Option<String>,
    key: &str,
) -> Result<Option<T>, ServiceError> {
    match lookup(key) {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ServiceError::Config(format!("{key}: cannot parse `{v}`"))),
    }
}

impl ServiceConfig {
    /// Reads PORT, MODEL_PATH, BLENDER_PATH, DATA_PATH, TOP_N, MAX_TURNS,
    /// EXPLAIN_K and SESSION_IDLE_SECS; unset variables keep their defaults.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_lookup(|k| env::var(k).ok().filter(|v| !v.is_empty()))
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let d = ServiceConfig::default();
        let cfg = ServiceConfig {
            port: parsed(&lookup, "PORT")?.unwrap_or(d.port),
            model_path: lookup("MODEL_PATH").map(PathBuf::from),
            blender_path: lookup("BLENDER_PATH").map(PathBuf::from),
            data_path: lookup("DATA_PATH").map(PathBuf::from),
            top_n: parsed(&lookup, "TOP_N")?.unwrap_or(d.top_n),
            max_turns: parsed(&lookup, "MAX_TURNS")?.unwrap_or(d.max_turns),
            explain_k: parsed(&lookup, "EXPLAIN_K")?.unwrap_or(d.explain_k),
            idle_timeout: parsed(&lookup, "SESSION_IDLE_SECS")?
                .map(Duration::from_secs)
                .unwrap_or(d.idle_timeout),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.top_n == 0 || self.max_turns == 0 {
            return Err(ServiceError::Config("TOP_N and MAX_TURNS must be at least 1".into()));
        }
        if self.model_path.is_some() && self.data_path.is_none() {
            return Err(ServiceError::Config("MODEL_PATH needs DATA_PATH".into()));
        }
        if self.blender_path.is_some() && self.model_path.is_none() {
            return Err(ServiceError::Config("BLENDER_PATH needs MODEL_PATH".into()));
        }
        Ok(())
    }
}
