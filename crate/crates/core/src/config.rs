//! Flat `key = value` experiment configuration.
//!
//! One setting per line, dotted keys, `#` starts a comment. Lists are
//! comma-separated. Every key is optional; omitted keys keep the defaults of
//! [`ExperimentConfig::default`]. Unknown and repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::active_loop::{LearnerConfig, StrategyConfig};
use crate::pipeline::{FeaturePipeline, TestPool};
use crate::sensor_sim::{ClassSet, PressRanges, SensorModel, REFERENCE_COMPLIANCES};
use crate::uncertainty::Strategy;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` set more than once")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot parse {value:?}: {reason}")]
    Parse { key: String, value: String, reason: String },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
    }

    /// The config key this error is about, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::Duplicate { key, .. }
            | ConfigError::Parse { key, .. }
            | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

/// Everything a command needs, validated up front.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Read videos from here instead of simulating them.
    pub data_dir: Option<PathBuf>,
    pub compliances: Vec<f64>,
    pub separability: f64,
    pub per_class: usize,
    pub ranges: PressRanges,
    pub sensor: SensorModel,
    pub pipeline: FeaturePipeline,
    pub schedule: StrategyConfig,
    pub strategies: Vec<Strategy>,
    pub learner: LearnerConfig,
    pub test_pool: TestPool,
    pub runs: usize,
    pub parallel: bool,
    pub sweep_rates: Vec<f64>,
    pub sweep_runs: usize,
}

/// Press-force range of the default dataset, N. Narrower than the full
/// sampling range so that peak indentation still separates neighbouring
/// compliance classes.
pub const DEFAULT_FORCE_RANGE: (f64, f64) = (2.7, 3.3);

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: None,
            data_dir: None,
            compliances: REFERENCE_COMPLIANCES.to_vec(),
            separability: 1.0,
            per_class: 60,
            ranges: PressRanges { f_min: DEFAULT_FORCE_RANGE.0, f_max: DEFAULT_FORCE_RANGE.1, ..PressRanges::default() },
            sensor: SensorModel::default(),
            pipeline: FeaturePipeline::default(),
            schedule: StrategyConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            learner: LearnerConfig::default(),
            test_pool: TestPool::Comparison,
            runs: 60,
            parallel: false,
            sweep_rates: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
            sweep_runs: 9,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "output.dir",
    "data.dir",
    "sensor.compliances",
    "sensor.separability",
    "sensor.per_class",
    "sensor.f_min",
    "sensor.f_max",
    "sensor.v_min",
    "sensor.v_max",
    "sensor.frame_rate",
    "sensor.noise_sigma",
    "sensor.height",
    "sensor.width",
    "sensor.marker_grid",
    "frame_select.threshold",
    "frame_select.n_intermediate_frames",
    "lk.max_points",
    "lk.window",
    "lk.max_iters",
    "lk.epsilon",
    "lk.min_distance",
    "model.dropout",
    "train.epochs_initial",
    "train.epochs_iter",
    "train.lr",
    "train.batch",
    "strategy.names",
    "strategy.s0",
    "strategy.iterations",
    "strategy.samples_per_iter",
    "strategy.max_train",
    "strategy.queries",
    "strategy.test_samples",
    "strategy.test_pool",
    "runs.count",
    "runs.parallel",
    "eval.dropout_rates",
    "eval.runs",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Parse {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        text.parse()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "output.dir" => self.output_dir = Some(PathBuf::from(value)),
            "data.dir" => self.data_dir = Some(PathBuf::from(value)),
            "sensor.compliances" => self.compliances = parse_list(key, value)?,
            "sensor.separability" => self.separability = parse(key, value)?,
            "sensor.per_class" => self.per_class = parse(key, value)?,
            "sensor.f_min" => self.ranges.f_min = parse(key, value)?,
            "sensor.f_max" => self.ranges.f_max = parse(key, value)?,
            "sensor.v_min" => self.ranges.v_min = parse(key, value)?,
            "sensor.v_max" => self.ranges.v_max = parse(key, value)?,
            "sensor.frame_rate" => self.ranges.frame_rate = parse(key, value)?,
            "sensor.noise_sigma" => self.ranges.noise_sigma = parse(key, value)?,
            "sensor.height" => self.sensor.height = parse(key, value)?,
            "sensor.width" => self.sensor.width = parse(key, value)?,
            "sensor.marker_grid" => self.sensor.marker_grid = parse(key, value)?,
            "frame_select.threshold" => self.pipeline.select.threshold = parse(key, value)?,
            "frame_select.n_intermediate_frames" => self.pipeline.select.n_intermediate = parse(key, value)?,
            "lk.max_points" => self.pipeline.lk.max_points = parse(key, value)?,
            "lk.window" => self.pipeline.lk.window = parse(key, value)?,
            "lk.max_iters" => self.pipeline.lk.max_iters = parse(key, value)?,
            "lk.epsilon" => self.pipeline.lk.epsilon = parse(key, value)?,
            "lk.min_distance" => self.pipeline.lk.min_distance = parse(key, value)?,
            "model.dropout" => self.learner.dropout = parse(key, value)?,
            "train.epochs_initial" => self.schedule.e0 = parse(key, value)?,
            "train.epochs_iter" => self.schedule.e = parse(key, value)?,
            "train.lr" => self.learner.learning_rate = parse(key, value)?,
            "train.batch" => self.learner.batch_size = parse(key, value)?,
            "strategy.names" => {
                self.strategies = parse_list(key, value)?;
            }
            "strategy.s0" => self.schedule.s0 = parse(key, value)?,
            "strategy.iterations" => self.schedule.iterations = parse(key, value)?,
            "strategy.samples_per_iter" => self.schedule.s = parse(key, value)?,
            "strategy.max_train" => self.schedule.max_train = parse(key, value)?,
            "strategy.queries" => self.schedule.queries = parse(key, value)?,
            "strategy.test_samples" => self.schedule.test_samples = parse(key, value)?,
            "strategy.test_pool" => {
                self.test_pool = match value {
                    "comparison" => TestPool::Comparison,
                    "balanced" => TestPool::Balanced,
                    _ => {
                        return Err(ConfigError::Parse {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected comparison or balanced".into(),
                        })
                    }
                }
            }
            "runs.count" => self.runs = parse(key, value)?,
            "runs.parallel" => self.parallel = parse(key, value)?,
            "eval.dropout_rates" => self.sweep_rates = parse_list(key, value)?,
            "eval.runs" => self.sweep_runs = parse(key, value)?,
            _ => unreachable!("key table and setter disagree on {key}"),
        }
        Ok(())
    }

    /// The class set after applying separability.
    pub fn class_set(&self) -> Result<ClassSet, ConfigError> {
        ClassSet::new(&self.compliances)
            .map_err(|e| ConfigError::invalid("sensor.compliances", e.to_string()))?
            .with_separability(self.separability)
            .map_err(|e| ConfigError::invalid("sensor.separability", e.to_string()))
    }

    /// Checks every setting against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be positive, got {v}")))
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be at least {min}, got {v}")))
            }
        };
        self.class_set()?;
        positive("sensor.separability", self.separability)?;
        at_least("sensor.per_class", self.per_class, 1)?;
        let r = &self.ranges;
        positive("sensor.f_min", r.f_min)?;
        positive("sensor.f_max", r.f_max)?;
        positive("sensor.v_min", r.v_min)?;
        positive("sensor.v_max", r.v_max)?;
        positive("sensor.frame_rate", r.frame_rate)?;
        if r.f_min > r.f_max {
            return Err(ConfigError::invalid("sensor.f_min", format!("{} exceeds sensor.f_max = {}", r.f_min, r.f_max)));
        }
        if r.v_min > r.v_max {
            return Err(ConfigError::invalid("sensor.v_min", format!("{} exceeds sensor.v_max = {}", r.v_min, r.v_max)));
        }
        if !(r.noise_sigma >= 0.0 && r.noise_sigma.is_finite()) {
            return Err(ConfigError::invalid("sensor.noise_sigma", "must be non-negative"));
        }
        at_least("sensor.height", self.sensor.height, 8)?;
        at_least("sensor.width", self.sensor.width, 8)?;
        at_least("sensor.marker_grid", self.sensor.marker_grid, 1)?;
        positive("frame_select.threshold", self.pipeline.select.threshold)?;
        at_least("frame_select.n_intermediate_frames", self.pipeline.select.n_intermediate, 1)?;
        self.pipeline.lk.validate().map_err(|e| match e {
            crate::optical_flow::FlowError::InvalidConfig { key, reason } => ConfigError::invalid(&format!("lk.{key}"), reason),
            other => ConfigError::invalid("lk", other.to_string()),
        })?;
        if !(0.0..1.0).contains(&self.learner.dropout) {
            return Err(ConfigError::invalid("model.dropout", format!("must be in [0, 1), got {}", self.learner.dropout)));
        }
        at_least("train.epochs_initial", self.schedule.e0, 1)?;
        at_least("train.epochs_iter", self.schedule.e, 1)?;
        positive("train.lr", self.learner.learning_rate)?;
        at_least("train.batch", self.learner.batch_size, 1)?;
        if self.strategies.is_empty() {
            return Err(ConfigError::invalid("strategy.names", "no strategies"));
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return Err(ConfigError::invalid("strategy.names", "repeated strategy"));
        }
        let s = &self.schedule;
        at_least("strategy.s0", s.s0, 1)?;
        at_least("strategy.samples_per_iter", s.s, 1)?;
        at_least("strategy.max_train", s.max_train, s.s0)?;
        at_least("strategy.queries", s.queries, 1)?;
        at_least("strategy.test_samples", s.test_samples, 1)?;
        at_least("runs.count", self.runs, 1)?;
        if self.data_dir.is_none() {
            let m = self.compliances.len();
            let test_share = match self.test_pool {
                TestPool::Comparison => s.test_samples,
                TestPool::Balanced => s.test_samples.div_ceil(m),
            };
            at_least("sensor.per_class", self.per_class, s.pool_demand() + test_share)?;
            let sweep_share = s.test_samples.div_ceil(m);
            at_least("sensor.per_class", self.per_class, s.s0 + sweep_share)?;
        }
        if let Some(&rate) = self.sweep_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(ConfigError::invalid("eval.dropout_rates", format!("{rate} outside [0, 1)")));
        }
        if self.sweep_rates.is_empty() {
            return Err(ConfigError::invalid("eval.dropout_rates", "no rates"));
        }
        at_least("eval.runs", self.sweep_runs, 1)?;
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        if let Some(d) = &self.output_dir {
            put("output.dir", d.display().to_string());
        }
        if let Some(d) = &self.data_dir {
            put("data.dir", d.display().to_string());
        }
        put("sensor.compliances", list(&self.compliances));
        put("sensor.separability", self.separability.to_string());
        put("sensor.per_class", self.per_class.to_string());
        put("sensor.f_min", self.ranges.f_min.to_string());
        put("sensor.f_max", self.ranges.f_max.to_string());
        put("sensor.v_min", self.ranges.v_min.to_string());
        put("sensor.v_max", self.ranges.v_max.to_string());
        put("sensor.frame_rate", self.ranges.frame_rate.to_string());
        put("sensor.noise_sigma", self.ranges.noise_sigma.to_string());
        put("sensor.height", self.sensor.height.to_string());
        put("sensor.width", self.sensor.width.to_string());
        put("sensor.marker_grid", self.sensor.marker_grid.to_string());
        put("frame_select.threshold", self.pipeline.select.threshold.to_string());
        put("frame_select.n_intermediate_frames", self.pipeline.select.n_intermediate.to_string());
        put("lk.max_points", self.pipeline.lk.max_points.to_string());
        put("lk.window", self.pipeline.lk.window.to_string());
        put("lk.max_iters", self.pipeline.lk.max_iters.to_string());
        put("lk.epsilon", self.pipeline.lk.epsilon.to_string());
        put("lk.min_distance", self.pipeline.lk.min_distance.to_string());
        put("model.dropout", self.learner.dropout.to_string());
        put("train.epochs_initial", self.schedule.e0.to_string());
        put("train.epochs_iter", self.schedule.e.to_string());
        put("train.lr", self.learner.learning_rate.to_string());
        put("train.batch", self.learner.batch_size.to_string());
        put("strategy.names", self.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
        put("strategy.s0", self.schedule.s0.to_string());
        put("strategy.iterations", self.schedule.iterations.to_string());
        put("strategy.samples_per_iter", self.schedule.s.to_string());
        put("strategy.max_train", self.schedule.max_train.to_string());
        put("strategy.queries", self.schedule.queries.to_string());
        put("strategy.test_samples", self.schedule.test_samples.to_string());
        put(
            "strategy.test_pool",
            match self.test_pool {
                TestPool::Comparison => "comparison",
                TestPool::Balanced => "balanced",
            }
            .to_string(),
        );
        put("runs.count", self.runs.to_string());
        put("runs.parallel", self.parallel.to_string());
        put("eval.dropout_rates", list(&self.sweep_rates));
        put("eval.runs", self.sweep_runs.to_string());
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    /// Parses and validates.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut config = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line: line_no, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line: line_no, key: key.into() });
            }
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }
}
