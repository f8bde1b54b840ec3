//! Accuracy, hardness MAE, run aggregation and the dropout-rate sweep.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::active_loop::{run_active_sampling, LearnerConfig, LoopError, StrategyConfig};
use crate::classifier::{Example, MlpClassifier, ModelError, Standardizer};
use crate::pipeline::{FeatureBank, PipelineError, TestPool};
use crate::seed::{self, stream};
use crate::sensor_sim::{ClassId, ClassSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predicted} predictions for {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("class {0} has no hardness value")]
    UnknownClass(ClassId),
    #[error("nothing to evaluate")]
    Empty,
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub accuracy: f64,
    pub mae: f64,
}

/// Mean absolute difference between predicted and true class compliances.
pub fn mae(predicted: &[ClassId], truth: &[ClassId], classes: &ClassSet) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let value = |id: ClassId| classes.get(id).map(|c| c.compliance).ok_or(EvalError::UnknownClass(id));
    let mut total = 0.0;
    for (&p, &t) in predicted.iter().zip(truth) {
        total += (value(p)? - value(t)?).abs();
    }
    Ok(total / predicted.len() as f64)
}

/// Deterministic accuracy and MAE of a model on standardized test inputs.
pub fn evaluate(
    model: &MlpClassifier,
    standardizer: &Standardizer,
    test: &[Example],
    classes: &ClassSet,
) -> Result<MetricRow, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut predicted = Vec::with_capacity(test.len());
    for ex in test {
        predicted.push(model.predict(&standardizer.transform(&ex.features))?);
    }
    let truth: Vec<ClassId> = test.iter().map(|e| e.label).collect();
    let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(MetricRow { accuracy: correct as f64 / test.len() as f64, mae: mae(&predicted, &truth, classes)? })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// Order-independent mean and population std: values are summed in sorted
/// order so any permutation of runs gives bit-identical results.
pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary { mean: f64::NAN, std: f64::NAN };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    Summary { mean, std: (dev.iter().sum::<f64>() / n).sqrt() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rate: f64,
    pub accuracy: Summary,
    pub mae: Summary,
    /// Per-run accuracies, in run order.
    pub runs: Vec<f64>,
}

/// Baseline training (no acquisition) at each dropout rate.
///
/// Run `r` uses the same pools and initialisation seed at every rate, so the
/// rows are paired. Test pools are balanced across classes.
pub fn dropout_sweep(
    bank: &FeatureBank,
    rates: &[f64],
    base: &StrategyConfig,
    learner: &LearnerConfig,
    runs: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<SweepRow>, EvalError> {
    if runs == 0 {
        return Err(EvalError::Empty);
    }
    if let Some(&r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(EvalError::InvalidRate(r));
    }
    let config = StrategyConfig { iterations: 0, ..base.clone() };
    let pools = (0..runs)
        .map(|r| bank.draw_pools(r, config.s0, config.test_samples, TestPool::Balanced, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let one = |(rate, r): (f64, usize)| -> Result<(f64, f64), EvalError> {
        let learner = LearnerConfig { dropout: rate, ..*learner };
        let record = run_active_sampling(&pools[r], &config, &learner, seed::derive(seed, stream::RUN, r as u64), r)?;
        let e = &record.entries[0];
        Ok((e.accuracy, e.mae))
    };
    let jobs: Vec<(f64, usize)> = rates.iter().flat_map(|&rate| (0..runs).map(move |r| (rate, r))).collect();
    let results: Vec<(f64, f64)> = if parallel {
        jobs.par_iter().map(|&j| one(j)).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(|&j| one(j)).collect::<Result<_, _>>()?
    };
    Ok(rates
        .iter()
        .zip(results.chunks(runs))
        .map(|(&rate, chunk)| {
            let acc: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let mae: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            SweepRow { rate, accuracy: summarize(&acc), mae: summarize(&mae), runs: acc }
        })
        .collect())
}

/// `rate,metric,mean,std`, two rows per rate.
pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "rate,metric,mean,std")?;
    for row in rows {
        writeln!(w, "{},accuracy,{},{}", row.rate, row.accuracy.mean, row.accuracy.std)?;
        writeln!(w, "{},mae,{},{}", row.rate, row.mae.mean, row.mae.std)?;
    }
    Ok(())
}
