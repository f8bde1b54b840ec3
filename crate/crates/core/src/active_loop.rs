//! Uncertainty-driven active sampling with a bounded training set.
//!
//! A run starts from `s0` samples per class, then repeatedly queries the
//! model with dropout on a fixed set of test samples, picks the reference
//! class to sample next, grows the training reservoir by `s` samples of that
//! class, and retrains (warm start) on at most `M` of them.

use std::io::{self, Write};

use rand::seq::index;
use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{Example, MlpClassifier, ModelError, Standardizer, TrainConfig};
use crate::eval::{evaluate, summarize, EvalError, Summary};
use crate::pipeline::{FeatureBank, PipelineError, TestPool};
use crate::seed::{self, stream};
use crate::sensor_sim::{ClassId, ClassSet};
use crate::uncertainty::{select_class, SelectionError, Strategy, UncertaintyReport};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid active sampling setting `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("class {class} pool has {available} samples, {needed} needed")]
    InsufficientPool { class: ClassId, available: usize, needed: usize },
    #[error("test pool has {available} samples, {needed} needed")]
    InsufficientTestPool { available: usize, needed: usize },
    #[error("training reservoir is empty")]
    EmptyReservoir,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("evaluation: {0}")]
    Eval(String),
}

impl From<EvalError> for LoopError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => LoopError::Model(m),
            other => LoopError::Eval(other.to_string()),
        }
    }
}

/// Acquisition schedule of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Initial samples per class.
    pub s0: usize,
    /// Initial training epochs.
    pub e0: usize,
    /// Acquisition iterations `N`.
    pub iterations: usize,
    /// Samples added per iteration.
    pub s: usize,
    /// Cap `M` on the per-iteration training set.
    pub max_train: usize,
    /// Epochs per iteration.
    pub e: usize,
    /// Stochastic queries per test sample.
    pub queries: usize,
    /// Test samples `l` used for uncertainty.
    pub test_samples: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Variance,
            s0: 5,
            e0: 100,
            iterations: 5,
            s: 5,
            max_train: 80,
            e: 50,
            queries: 20,
            test_samples: 10,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let counts = [
            ("s0", self.s0),
            ("e0", self.e0),
            ("s", self.s),
            ("max_train", self.max_train),
            ("e", self.e),
            ("queries", self.queries),
            ("test_samples", self.test_samples),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(LoopError::InvalidConfig { key, reason: "must be at least 1".into() });
            }
        }
        if self.max_train < self.s0 {
            return Err(LoopError::InvalidConfig {
                key: "max_train",
                reason: format!("{} is below s0 = {}", self.max_train, self.s0),
            });
        }
        Ok(())
    }

    /// Samples a class pool must hold so any acquisition order fits.
    pub fn pool_demand(&self) -> usize {
        self.s0 + self.iterations * self.s
    }
}

/// Model and optimiser settings shared by every run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { dropout: 0.2, learning_rate: 0.05, batch_size: 16 }
    }
}

/// Per-run data: acquisition-ordered training pools per class and the
/// held-out test pool (the first `l` test samples drive uncertainty).
#[derive(Debug, Clone, PartialEq)]
pub struct RunPools {
    pub classes: ClassSet,
    pub train: Vec<Vec<Vec<f64>>>,
    pub test: Vec<Example>,
}

/// Every sample acquired so far (`TR`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReservoir {
    samples: Vec<Example>,
    counts: Vec<usize>,
    cap: usize,
}

impl TrainingReservoir {
    pub fn new(classes: usize, cap: usize) -> Self {
        Self { samples: Vec::new(), counts: vec![0; classes], cap }
    }

    pub fn push(&mut self, example: Example) {
        self.counts[example.label.index()] += 1;
        self.samples.push(example);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Example] {
        &self.samples
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

/// Indices of the training subset: everything if `|TR| <= M`, else a
/// uniform sample of `M` distinct indices (ascending).
pub fn select_training_indices(reservoir: &TrainingReservoir, seed: u64) -> Result<Vec<usize>, LoopError> {
    if reservoir.is_empty() {
        return Err(LoopError::EmptyReservoir);
    }
    let n = reservoir.len();
    if n <= reservoir.cap {
        return Ok((0..n).collect());
    }
    let mut picked = index::sample(&mut seed::rng(seed), n, reservoir.cap).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// The training subset `TS`.
pub fn select_training_set(reservoir: &TrainingReservoir, seed: u64) -> Result<Vec<Example>, LoopError> {
    Ok(select_training_indices(reservoir, seed)?.into_iter().map(|i| reservoir.samples[i].clone()).collect())
}

/// State after one training round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Class acquired before this round's training (`None` initially).
    pub selected: Option<ClassId>,
    pub accuracy: f64,
    pub mae: f64,
    pub report: UncertaintyReport,
    pub reservoir_size: usize,
    pub class_counts: Vec<usize>,
    pub training_set_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub config_hash: u64,
    pub entries: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn final_entry(&self) -> &IterationRecord {
        self.entries.last().expect("a run always has its initial entry")
    }

    pub fn csv_header(classes: usize) -> String {
        let mut cols: Vec<String> =
            ["run_id", "strategy", "iter", "selected_class", "accuracy", "mae"].map(String::from).to_vec();
        cols.extend((1..=classes).map(|i| format!("H_{i}")));
        cols.extend((1..=classes).map(|i| format!("Var_{i}")));
        cols.push("reservoir_size".into());
        cols.extend((1..=classes).map(|i| format!("count_{i}")));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = self.entries.first().map_or(0, |e| e.class_counts.len());
        writeln!(w, "{}", Self::csv_header(m))?;
        for e in &self.entries {
            let mut cols = vec![
                self.run_id.to_string(),
                self.strategy.to_string(),
                e.iteration.to_string(),
                e.selected.map(|c| c.0.to_string()).unwrap_or_default(),
                e.accuracy.to_string(),
                e.mae.to_string(),
            ];
            cols.extend(e.report.entropy.iter().map(f64::to_string));
            cols.extend(e.report.variance.iter().map(f64::to_string));
            cols.push(e.reservoir_size.to_string());
            cols.extend(e.class_counts.iter().map(usize::to_string));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a digest of the run settings.
pub fn config_hash(config: &StrategyConfig, learner: &LearnerConfig) -> u64 {
    let text = format!("{config:?}|{learner:?}");
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

struct RunState<'a> {
    pools: &'a RunPools,
    learner: &'a LearnerConfig,
    config: &'a StrategyConfig,
    model: MlpClassifier,
    seed: u64,
    mc_inputs: Vec<Vec<f64>>,
}

impl RunState<'_> {
    fn train(&mut self, reservoir: &TrainingReservoir, round: usize, epochs: usize) -> Result<(Standardizer, usize), LoopError> {
        let standardizer = Standardizer::fit(reservoir.samples().iter().map(|e| e.features.as_slice()))?;
        let subset = if round == 0 {
            reservoir.samples().to_vec()
        } else {
            select_training_set(reservoir, seed::derive(self.seed, stream::SUBSAMPLE, round as u64))?
        };
        let scaled: Vec<Example> = subset
            .iter()
            .map(|e| Example { features: standardizer.transform(&e.features), label: e.label })
            .collect();
        let cfg = TrainConfig {
            epochs,
            learning_rate: self.learner.learning_rate,
            batch_size: self.learner.batch_size,
            seed: seed::derive(self.seed, stream::TRAIN, round as u64),
        };
        self.model.train(&scaled, &cfg)?;
        Ok((standardizer, scaled.len()))
    }

    fn record(
        &self,
        round: usize,
        selected: Option<ClassId>,
        standardizer: &Standardizer,
        reservoir: &TrainingReservoir,
        training_set_size: usize,
    ) -> Result<IterationRecord, LoopError> {
        let metrics = evaluate(&self.model, standardizer, &self.pools.test, &self.pools.classes)?;
        let inputs: Vec<Vec<f64>> = self.mc_inputs.iter().map(|x| standardizer.transform(x)).collect();
        let preds = self.model.predict_mc(&inputs, self.config.queries, seed::derive(self.seed, stream::MC, round as u64))?;
        Ok(IterationRecord {
            iteration: round,
            selected,
            accuracy: metrics.accuracy,
            mae: metrics.mae,
            report: UncertaintyReport::from_predictions(&preds),
            reservoir_size: reservoir.len(),
            class_counts: reservoir.counts().to_vec(),
            training_set_size,
        })
    }
}

/// Runs one active sampling trajectory. Deterministic in `(pools, config,
/// learner, seed)`.
pub fn run_active_sampling(
    pools: &RunPools,
    config: &StrategyConfig,
    learner: &LearnerConfig,
    seed: u64,
    run_id: usize,
) -> Result<RunRecord, LoopError> {
    config.validate()?;
    let m = pools.classes.len();
    if pools.train.len() != m {
        return Err(LoopError::InvalidConfig { key: "pools", reason: format!("{} pools for {m} classes", pools.train.len()) });
    }
    let needed = config.pool_demand();
    for (i, pool) in pools.train.iter().enumerate() {
        if pool.len() < needed {
            return Err(LoopError::InsufficientPool { class: ClassId::from_index(i), available: pool.len(), needed });
        }
    }
    if pools.test.len() < config.test_samples {
        return Err(LoopError::InsufficientTestPool { available: pools.test.len(), needed: config.test_samples });
    }
    let dim = pools.train.iter().flatten().next().map_or(0, Vec::len);
    let model = MlpClassifier::new(dim, m, learner.dropout, seed::derive(seed, stream::INIT, 0))?;
    let mut state = RunState {
        pools,
        learner,
        config,
        model,
        seed,
        mc_inputs: pools.test[..config.test_samples].iter().map(|e| e.features.clone()).collect(),
    };

    let mut reservoir = TrainingReservoir::new(m, config.max_train);
    let mut cursor = vec![0usize; m];
    let mut acquire = |reservoir: &mut TrainingReservoir, class: usize, count: usize| {
        for features in &pools.train[class][cursor[class]..cursor[class] + count] {
            reservoir.push(Example { features: features.clone(), label: ClassId::from_index(class) });
        }
        cursor[class] += count;
    };
    for class in 0..m {
        acquire(&mut reservoir, class, config.s0);
    }
    let (standardizer, ts) = state.train(&reservoir, 0, config.e0)?;
    let mut entries = vec![state.record(0, None, &standardizer, &reservoir, ts)?];

    for round in 1..=config.iterations {
        let report = &entries[round - 1].report;
        let class = select_class(Some(report), config.strategy, m, seed::derive(seed, stream::SELECT, round as u64))?;
        acquire(&mut reservoir, class.index(), config.s);
        let (standardizer, ts) = state.train(&reservoir, round, config.e)?;
        entries.push(state.record(round, Some(class), &standardizer, &reservoir, ts)?);
    }
    Ok(RunRecord { run_id, strategy: config.strategy, seed, config_hash: config_hash(config, learner), entries })
}

/// Metric tracked across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    Mae,
    Entropy,
    Variance,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::Mae, Metric::Entropy, Metric::Variance];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mae => "mae",
            Metric::Entropy => "entropy",
            Metric::Variance => "variance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Value of this metric at one entry; entropy and variance are averaged
    /// over classes.
    pub fn of(self, e: &IterationRecord) -> f64 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        match self {
            Metric::Accuracy => e.accuracy,
            Metric::Mae => e.mae,
            Metric::Entropy => mean(&e.report.entropy),
            Metric::Variance => mean(&e.report.variance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub iteration: usize,
    pub metric: Metric,
    pub summary: Summary,
}

/// Per-strategy, per-iteration mean and std of every metric.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == strategy).collect();
        let Some(len) = runs.iter().map(|r| r.entries.len()).min() else { continue };
        for iteration in 0..len {
            for metric in Metric::ALL {
                let values: Vec<f64> = runs.iter().map(|r| metric.of(&r.entries[iteration])).collect();
                rows.push(AggregateRow { strategy, iteration, metric, summary: summarize(&values) });
            }
        }
    }
    rows
}

pub fn write_aggregate_csv<W: Write>(w: &mut W, rows: &[AggregateRow]) -> io::Result<()> {
    writeln!(w, "strategy,iter,metric,mean,std")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.strategy, r.iteration, r.metric.name(), r.summary.mean, r.summary.std)?;
    }
    Ok(())
}

/// Parses what [`write_aggregate_csv`] wrote.
pub fn read_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some("strategy,iter,metric,mean,std") => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| format!("line {}: bad {what}", i + 2);
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad("column count"));
            }
            Ok(AggregateRow {
                strategy: cols[0].parse().map_err(|_| bad("strategy"))?,
                iteration: cols[1].parse().map_err(|_| bad("iteration"))?,
                metric: Metric::parse(cols[2]).ok_or_else(|| bad("metric"))?,
                summary: Summary {
                    mean: cols[3].parse().map_err(|_| bad("mean"))?,
                    std: cols[4].parse().map_err(|_| bad("std"))?,
                },
            })
        })
        .collect()
}

/// Which runs an experiment performs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub strategies: Vec<Strategy>,
    pub runs: usize,
    pub seed: u64,
    pub test_pool: TestPool,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Strategy-major, then run order.
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs every strategy on the same per-run pools and seeds.
pub fn run_experiment(
    bank: &FeatureBank,
    config: &StrategyConfig,
    learner: &LearnerConfig,
    plan: &ExperimentPlan,
) -> Result<Experiment, LoopError> {
    config.validate()?;
    if plan.runs == 0 {
        return Err(LoopError::InvalidConfig { key: "runs", reason: "must be at least 1".into() });
    }
    let pools = (0..plan.runs)
        .map(|r| bank.draw_pools(r, config.pool_demand(), config.test_samples, plan.test_pool, plan.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(Strategy, usize)> =
        plan.strategies.iter().flat_map(|&s| (0..plan.runs).map(move |r| (s, r))).collect();
    let one = |&(strategy, r): &(Strategy, usize)| {
        let cfg = StrategyConfig { strategy, ..config.clone() };
        run_active_sampling(&pools[r], &cfg, learner, seed::derive(plan.seed, stream::RUN, r as u64), r)
    };
    let records: Vec<RunRecord> = if plan.parallel {
        jobs.par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(one).collect::<Result<_, _>>()?
    };
    let aggregate = aggregate(&records);
    Ok(Experiment { records, aggregate })
}
