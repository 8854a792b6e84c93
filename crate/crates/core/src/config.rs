//! Run configuration: one TOML file, `COMM_RL_*` environment overrides,
//! and a resolved echo written next to every run's outputs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvSpec;
use crate::optim::TrainConfig;
use crate::similarity::{fnv1a64, HashedBagScorer, RemoteScorer, Scorer, DEFAULT_EMBED_DIM};

pub const ECHO_FILE: &str = "config.echo.toml";
pub const ENV_PREFIX: &str = "COMM_RL_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value for {var}: {value:?}")]
    Override { var: String, value: String },
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Width of an optional tanh hidden layer shared by all heads.
    pub hidden: Option<usize>,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1.0,
            hidden: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalScorerConfig {
    pub dim: usize,
}

impl Default for LocalScorerConfig {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteScorerConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: RemoteScorer::DEFAULT_TIMEOUT.as_millis() as u64,
            attempts: RemoteScorer::DEFAULT_ATTEMPTS,
            backoff_ms: RemoteScorer::DEFAULT_BACKOFF.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub local: LocalScorerConfig,
    pub remote: RemoteScorerConfig,
}

impl ScorerConfig {
    pub fn build(&self) -> Box<dyn Scorer> {
        match self.kind {
            ScorerKind::Local => Box::new(HashedBagScorer::new(self.local.dim)),
            ScorerKind::Remote => Box::new(
                RemoteScorer::new(self.remote.endpoint.clone(), Duration::from_millis(self.remote.timeout_ms))
                    .with_attempts(self.remote.attempts)
                    .with_backoff(Duration::from_millis(self.remote.backoff_ms)),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Dataset, initialization, warm-up and training seeds are
    /// derived from it; `train.seed` is overwritten on resolution.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvSpec,
    pub warmup: WarmupConfig,
    pub train: TrainConfig,
    pub scorer: ScorerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            env: EnvSpec::default(),
            warmup: WarmupConfig::default(),
            train: TrainConfig::default(),
            scorer: ScorerConfig::default(),
        };
        cfg.resolve();
        cfg
    }
}

/// Seed for a named purpose, derived from the master seed.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    fnv1a64(format!("{master}/{purpose}").as_bytes())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Fills derived fields. Idempotent.
    pub fn resolve(&mut self) {
        self.train.seed = derive_seed(self.seed, "train");
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, "dataset")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn demo_seed(&self) -> u64 {
        derive_seed(self.seed, "demonstrations")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.resolve();
    }

    /// Applies `COMM_RL_SEED`, `COMM_RL_OUT`, `COMM_RL_SCORER`
    /// (`local`/`remote`), `COMM_RL_SCORER_ENDPOINT` (implies remote) and
    /// `COMM_RL_SCORER_TIMEOUT_MS` from `vars`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let (k, v) = (k.as_ref(), v.as_ref());
            let Some(name) = k.strip_prefix(ENV_PREFIX) else { continue };
            let bad = || ConfigError::Override { var: k.to_string(), value: v.to_string() };
            match name {
                "SEED" => self.set_seed(v.parse().map_err(|_| bad())?),
                "OUT" => self.out_dir = PathBuf::from(v),
                "SCORER" => {
                    self.scorer.kind = match v {
                        "local" => ScorerKind::Local,
                        "remote" => ScorerKind::Remote,
                        _ => return Err(bad()),
                    }
                }
                "SCORER_ENDPOINT" => {
                    self.scorer.kind = ScorerKind::Remote;
                    self.scorer.remote.endpoint = v.to_string();
                }
                "SCORER_TIMEOUT_MS" => self.scorer.remote.timeout_ms = v.parse().map_err(|_| bad())?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate()?;
        self.train.validate()?;
        if !(self.warmup.learning_rate > 0.0 && self.warmup.learning_rate.is_finite()) {
            return Err(ConfigError::Parse("warmup.learning_rate must be positive".into()));
        }
        if self.warmup.hidden == Some(0) {
            return Err(ConfigError::Parse("warmup.hidden must be positive when set".into()));
        }
        if self.scorer.kind == ScorerKind::Remote && self.scorer.remote.endpoint.is_empty() {
            return Err(ConfigError::Parse("remote scorer needs scorer.remote.endpoint".into()));
        }
        if self.scorer.local.dim == 0 {
            return Err(ConfigError::Parse("scorer.local.dim must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Writes the resolved config to `dir/config.echo.toml`.
    pub fn write_echo(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 3\n[env]\nconfusion_rate = 1.0\n[train]\ngroup_size = 4\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.env.confusion_rate, 1.0);
        assert_eq!(cfg.env.eval_size, EnvSpec::default().eval_size);
        assert_eq!(cfg.train.group_size, 4);
        assert_eq!(cfg.train.seed, derive_seed(3, "train"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(RunConfig::from_toml_str("sead = 3"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml_str("[train]\nepsilon = 0.1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn env_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_env([
            ("COMM_RL_SEED", "99"),
            ("COMM_RL_OUT", "/tmp/x"),
            ("COMM_RL_SCORER_ENDPOINT", "http://127.0.0.1:1/score"),
            ("PATH", "/bin"),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.seed, derive_seed(99, "train"));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.scorer.kind, ScorerKind::Remote);
        assert!(cfg.apply_env([("COMM_RL_SEED", "x")]).is_err());
        assert!(cfg.apply_env([("COMM_RL_SCORER", "cloud")]).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.train.clip_epsilon = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.scorer.kind = ScorerKind::Remote;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let cfg = RunConfig::default();
        let seeds = [cfg.dataset_seed(), cfg.init_seed(), cfg.demo_seed(), cfg.train.seed];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
