//! Per-class uncertainty of MC-dropout predictions and next-class selection.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use thiserror::Error;

use crate::classifier::PredictionSet;
use crate::seed;
use crate::sensor_sim::ClassId;

/// Acquisition strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Entropy,
    Variance,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Entropy, Strategy::Variance, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Entropy => "entropy",
            Strategy::Variance => "variance",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("unknown strategy {0:?} (expected entropy, variance or random)")]
    UnknownStrategy(String),
    #[error("strategy {0} needs an uncertainty report")]
    MissingReport(Strategy),
    #[error("no classes to select from")]
    EmptyClassSet,
}

impl FromStr for Strategy {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entropy" => Ok(Strategy::Entropy),
            "variance" => Ok(Strategy::Variance),
            "random" => Ok(Strategy::Random),
            other => Err(SelectionError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Per-class entropy, variance and mean, indexed by class index (id - 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub entropy: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean: Vec<f64>,
}

impl UncertaintyReport {
    pub fn from_predictions(preds: &PredictionSet) -> Self {
        let mean = class_mean(preds);
        Self { entropy: class_entropy(preds), variance: variance_about(preds, &mean), mean }
    }

    pub fn classes(&self) -> usize {
        self.entropy.len()
    }

    /// The vector a strategy ranks classes by, if it uses one.
    pub fn scores(&self, strategy: Strategy) -> Option<&[f64]> {
        match strategy {
            Strategy::Entropy => Some(&self.entropy),
            Strategy::Variance => Some(&self.variance),
            Strategy::Random => None,
        }
    }

    pub fn csv_header(classes: usize) -> String {
        let mut cols = vec!["iteration".to_string()];
        for prefix in ["H", "Var", "mu"] {
            cols.extend((1..=classes).map(|i| format!("{prefix}_{i}")));
        }
        cols.push("selected_class".into());
        cols.join(",")
    }

    /// `iteration,H_1..H_m,Var_1..Var_m,mu_1..mu_m,selected_class`; an
    /// absent selection is written as an empty field.
    pub fn csv_row(&self, iteration: usize, selected: Option<ClassId>) -> String {
        let mut cols = vec![iteration.to_string()];
        for v in [&self.entropy, &self.variance, &self.mean] {
            cols.extend(v.iter().map(|x| format!("{x:.17e}")));
        }
        cols.push(selected.map(|c| c.0.to_string()).unwrap_or_default());
        cols.join(",")
    }
}

/// `H_i = -(1/(n l)) sum_k sum_j p ln p`, natural log, `0 ln 0 = 0`.
pub fn class_entropy(preds: &PredictionSet) -> Vec<f64> {
    let count = (preds.queries() * preds.samples()) as f64;
    (0..preds.classes())
        .map(|i| {
            let s: f64 = preds.class_entries(i).filter(|&p| p > 0.0).map(|p| p * p.ln()).sum();
            -s / count
        })
        .collect()
}

/// `mu_i`, the mean of all `n l` entries for class `i`.
pub fn class_mean(preds: &PredictionSet) -> Vec<f64> {
    let count = (preds.queries() * preds.samples()) as f64;
    (0..preds.classes()).map(|i| preds.class_entries(i).sum::<f64>() / count).collect()
}

/// Population variance of all `n l` entries for each class.
pub fn class_variance(preds: &PredictionSet) -> Vec<f64> {
    variance_about(preds, &class_mean(preds))
}

fn variance_about(preds: &PredictionSet, mean: &[f64]) -> Vec<f64> {
    let count = (preds.queries() * preds.samples()) as f64;
    mean.iter()
        .enumerate()
        .map(|(i, mu)| preds.class_entries(i).map(|p| (p - mu) * (p - mu)).sum::<f64>() / count)
        .collect()
}

/// Index of the largest score, lowest index on ties.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    Some(crate::classifier::argmax(scores))
}

/// Chooses the next reference class. `classes` is the size of the class set;
/// the random strategy draws from it uniformly and ignores the report.
pub fn select_class(
    report: Option<&UncertaintyReport>,
    strategy: Strategy,
    classes: usize,
    seed: u64,
) -> Result<ClassId, SelectionError> {
    if classes == 0 {
        return Err(SelectionError::EmptyClassSet);
    }
    match strategy {
        Strategy::Random => Ok(ClassId::from_index(seed::rng(seed).random_range(0..classes))),
        s => {
            let report = report.ok_or(SelectionError::MissingReport(s))?;
            let scores = report.scores(s).expect("ranked strategy");
            argmax_lowest(scores).map(ClassId::from_index).ok_or(SelectionError::EmptyClassSet)
        }
    }
}
