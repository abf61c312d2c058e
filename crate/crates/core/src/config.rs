//! Experiment configuration: a single JSON document, validated up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{Horizon, LogLevel, Model, RunConfig, UpdateOrder};
use crate::heavy_traffic::{ScaledFamily, SweepTolerances};
use crate::stats::DEFAULT_BATCHES;

/// Environment variable consulted when no `--seed` flag is given.
pub const SEED_ENV: &str = "PALM_BAR_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at `{path}` (line {line}, column {column}): {message}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

/// Exactly one of the two bounds. `events` counts events after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSetting {
    #[default]
    None,
    Summary,
    Full,
}

impl From<LogSetting> for LogLevel {
    fn from(l: LogSetting) -> Self {
        match l {
            LogSetting::None => LogLevel::None,
            LogSetting::Summary => LogLevel::Summary,
            LogSetting::Full => LogLevel::Full,
        }
    }
}

/// Test-function family of a `bar-check` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    Constant {
        value: f64,
    },
    /// Exponents solved per grid point with cutoff `1/r`.
    Exponential {
        theta_grid: Vec<Vec<f64>>,
        r: f64,
    },
    ClockExponential {
        arrival: Vec<f64>,
        service: Vec<f64>,
    },
    LinearResidual {
        arrival: Vec<f64>,
        service: Vec<f64>,
    },
    /// `f = R_s` on a finite-buffer queue, checked as rate conservation.
    RateConservation,
}

fn default_max_level() -> u64 {
    10
}

fn default_tv_threshold() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        #[serde(default)]
        log: LogSetting,
        #[serde(default)]
        order: UpdateOrder,
    },
    Traffic {},
    Palm {
        #[serde(default)]
        station: usize,
        #[serde(default = "default_max_level")]
        max_level: u64,
    },
    BarCheck {
        function: FunctionConfig,
    },
    HtSweep {
        family: ScaledFamily,
        #[serde(default)]
        tolerances: SweepTolerances,
    },
    OracleCompare {
        #[serde(default = "default_tv_threshold")]
        tv_threshold: f64,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::Traffic {} => "traffic",
            Experiment::Palm { .. } => "palm",
            Experiment::BarCheck { .. } => "bar-check",
            Experiment::HtSweep { .. } => "ht-sweep",
            Experiment::OracleCompare { .. } => "oracle-compare",
        }
    }
}

fn default_warmup() -> f64 {
    0.2
}

fn default_reps() -> u64 {
    1
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default)]
    pub horizon: HorizonConfig,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_reps")]
    pub replications: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Simulate even when some station has load at least one.
    #[serde(default)]
    pub allow_unstable: bool,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub events: Option<u64>,
    pub warmup: Option<f64>,
    pub replications: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Schema {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies flags, then the seed environment fallback, then validates.
    /// `env_seed` is the raw value of [`SEED_ENV`], if set.
    pub fn resolve(mut self, o: &Overrides, env_seed: Option<&str>) -> Result<Self, ConfigError> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        } else if let Some(raw) = env_seed {
            let s = raw
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            self.seed = Some(s);
        }
        if self.seed.is_none() {
            self.seed = Some(0);
        }
        if let Some(n) = o.events {
            self.horizon = HorizonConfig {
                events: Some(n),
                time: None,
            };
        }
        if let Some(w) = o.warmup {
            self.warmup = w;
        }
        if let Some(r) = o.replications {
            self.replications = r;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(0.0..1.0).contains(&self.warmup) {
            return bad("warmup must lie in [0, 1)");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.batches < 2 {
            return bad("batches must be at least 2");
        }
        if matches!(self.experiment, Experiment::HtSweep { .. }) && self.replications != 1 {
            return bad("ht-sweep runs one replication per r; set replications to 1");
        }
        let needs_model = !matches!(self.experiment, Experiment::HtSweep { .. });
        if needs_model && self.model.is_none() {
            return bad("this experiment needs a model block");
        }
        if let Some(Model::FiniteQueue(q)) = &self.model {
            if q.ell0 == 0 {
                return bad("finite_queue.ell0 must be at least 1");
            }
        }
        let needs_horizon = !matches!(self.experiment, Experiment::Traffic {});
        match (self.horizon.events, self.horizon.time) {
            (Some(_), Some(_)) => return bad("give either horizon.events or horizon.time, not both"),
            (None, None) if needs_horizon => return bad("horizon.events or horizon.time is required"),
            (None, Some(t)) if !(t > 0.0 && t.is_finite()) => return bad("horizon.time must be positive"),
            (None, Some(_)) if matches!(self.experiment, Experiment::HtSweep { .. }) => {
                return bad("ht-sweep needs horizon.events")
            }
            _ => {}
        }
        match (&self.experiment, &self.model) {
            (Experiment::Traffic {}, Some(Model::FiniteQueue(_))) => bad("traffic needs a network model"),
            (
                Experiment::BarCheck {
                    function: FunctionConfig::RateConservation,
                },
                Some(Model::Network(_)),
            ) => bad("rate conservation needs a finite_queue model"),
            (Experiment::Palm { station, .. }, Some(m)) if *station >= m.stations() => {
                bad("palm.station is out of range")
            }
            _ => Ok(()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Engine settings for replication `rep`.
    pub fn run_config(&self, rep: u64) -> RunConfig {
        let mut cfg = match (self.horizon.events, self.horizon.time) {
            (Some(n), _) => RunConfig::measured_events(n, self.warmup, self.seed()),
            (None, Some(t)) => RunConfig {
                warmup: self.warmup,
                ..RunConfig::time(t, self.seed())
            },
            (None, None) => RunConfig {
                horizon: Horizon::Events(0),
                ..RunConfig::events(0, self.seed())
            },
        };
        cfg.replication = rep;
        cfg.batches = self.batches;
        cfg.allow_unstable = self.allow_unstable;
        if let Experiment::Simulate { log, order } = self.experiment {
            cfg.log = log.into();
            cfg.order = order;
        }
        cfg
    }

    /// Canonical JSON of the resolved config. The output directory is left
    /// out so that the same experiment hashes the same wherever it is written.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(out) = v.get_mut("output").and_then(|o| o.as_object_mut()) {
            out.remove("dir");
        }
        v.to_string()
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
