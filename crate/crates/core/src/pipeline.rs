//! Video-to-feature plumbing and per-run pool drawing.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::active_loop::RunPools;
use crate::classifier::Example;
use crate::frame_select::{build_sample, SelectConfig, SelectError};
use crate::optical_flow::{extract_features, FlowError, LkConfig};
use crate::seed::{self, stream};
use crate::sensor_sim::io::{read_manifest, read_video, FormatError, ManifestEntry};
use crate::sensor_sim::{plan_dataset, ClassId, ClassSet, PressRanges, PressVideo, SensorModel, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("class {class} has {available} samples, {needed} needed")]
    InsufficientPool { class: ClassId, available: usize, needed: usize },
    #[error("feature vector has {got} values, expected {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("sample labelled {0} is not in the class set")]
    UnknownClass(ClassId),
    #[error("test pool of {requested} samples cannot be drawn from {classes} classes")]
    InvalidTestPool { requested: usize, classes: usize },
}

/// How a run's held-out test samples are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestPool {
    /// Every test sample comes from one comparison class, `run mod m`.
    Comparison,
    /// Test samples are spread over all classes as evenly as possible.
    Balanced,
}

/// Frame selection and flow settings applied to every video.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeaturePipeline {
    pub select: SelectConfig,
    pub lk: LkConfig,
}

impl FeaturePipeline {
    pub fn feature_len(&self) -> usize {
        self.lk.feature_len(self.select.frames_total())
    }

    pub fn features(&self, video: &PressVideo) -> Result<Vec<f64>, PipelineError> {
        let sample = build_sample(video, &self.select)?;
        Ok(extract_features(&sample, &self.lk)?.values)
    }
}

/// Feature vectors grouped by class, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    classes: ClassSet,
    dim: usize,
    per_class: Vec<Vec<Vec<f64>>>,
}

impl FeatureBank {
    /// Simulates `per_class` presses per class and keeps only their features.
    pub fn generate(
        sensor: &SensorModel,
        pipeline: &FeaturePipeline,
        classes: &ClassSet,
        per_class: usize,
        ranges: &PressRanges,
        seed: u64,
        parallel: bool,
    ) -> Result<Self, PipelineError> {
        let specs = plan_dataset(classes, per_class, ranges, seed)?;
        let one = |spec: &crate::sensor_sim::SampleSpec| -> Result<(ClassId, Vec<f64>), PipelineError> {
            let video = spec.simulate(sensor)?;
            Ok((spec.class.id, pipeline.features(&video)?))
        };
        let rows: Vec<(ClassId, Vec<f64>)> = if parallel {
            specs.par_iter().map(one).collect::<Result<_, _>>()?
        } else {
            specs.iter().map(one).collect::<Result<_, _>>()?
        };
        Self::from_rows(classes.clone(), pipeline.feature_len(), rows)
    }

    /// Extracts features from every video listed in a dataset manifest, one
    /// file at a time.
    pub fn from_dataset_dir(
        dir: &Path,
        classes: &ClassSet,
        pipeline: &FeaturePipeline,
        parallel: bool,
    ) -> Result<Self, PipelineError> {
        let entries = read_manifest(dir)?;
        let one = |e: &ManifestEntry| -> Result<(ClassId, Vec<f64>), PipelineError> {
            let video = read_video(&dir.join(&e.path))?;
            if video.label != e.label {
                return Err(FormatError::Malformed(format!("{}: label {} disagrees with manifest label {}", e.path, video.label, e.label)).into());
            }
            Ok((e.label, pipeline.features(&video)?))
        };
        let rows: Vec<(ClassId, Vec<f64>)> = if parallel {
            entries.par_iter().map(one).collect::<Result<_, _>>()?
        } else {
            entries.iter().map(one).collect::<Result<_, _>>()?
        };
        Self::from_rows(classes.clone(), pipeline.feature_len(), rows)
    }

    /// Builds a bank from already labelled feature vectors.
    pub fn from_rows<I>(classes: ClassSet, dim: usize, rows: I) -> Result<Self, PipelineError>
    where
        I: IntoIterator<Item = (ClassId, Vec<f64>)>,
    {
        let mut per_class = vec![Vec::new(); classes.len()];
        for (label, features) in rows {
            if classes.get(label).is_none() {
                return Err(PipelineError::UnknownClass(label));
            }
            if features.len() != dim {
                return Err(PipelineError::FeatureWidth { expected: dim, got: features.len() });
            }
            per_class[label.index()].push(features);
        }
        Ok(Self { classes, dim, per_class })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_samples(&self, class: ClassId) -> &[Vec<f64>] {
        &self.per_class[class.index()]
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws disjoint training pools (`train_per_class` each, in acquisition
    /// order) and a test pool of `test_samples` for run number `run`.
    pub fn draw_pools(
        &self,
        run: usize,
        train_per_class: usize,
        test_samples: usize,
        mode: TestPool,
        seed: u64,
    ) -> Result<RunPools, PipelineError> {
        let m = self.classes.len();
        if test_samples == 0 {
            return Err(PipelineError::InvalidTestPool { requested: 0, classes: m });
        }
        let mut rng = seed::rng(seed::derive(seed, stream::POOLS, run as u64));
        let test_counts: Vec<usize> = match mode {
            TestPool::Comparison => (0..m).map(|i| if i == run % m { test_samples } else { 0 }).collect(),
            TestPool::Balanced => (0..m).map(|i| test_samples / m + usize::from(i < test_samples % m)).collect(),
        };
        let mut train = Vec::with_capacity(m);
        let mut test = Vec::with_capacity(test_samples);
        for (i, samples) in self.per_class.iter().enumerate() {
            let class = ClassId::from_index(i);
            let needed = train_per_class + test_counts[i];
            if samples.len() < needed {
                return Err(PipelineError::InsufficientPool { class, available: samples.len(), needed });
            }
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            let (held, rest) = order.split_at(test_counts[i]);
            test.extend(held.iter().map(|&k| Example { features: samples[k].clone(), label: class }));
            train.push(rest[..train_per_class].iter().map(|&k| samples[k].clone()).collect());
        }
        Ok(RunPools { classes: self.classes.clone(), train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(per_class: usize) -> FeatureBank {
        let classes = ClassSet::new(&[1.0, 0.8, 0.6]).unwrap();
        let rows = (0..3).flat_map(|c| (0..per_class).map(move |k| (ClassId::from_index(c), vec![c as f64, k as f64])));
        FeatureBank::from_rows(classes, 2, rows).unwrap()
    }

    #[test]
    fn comparison_pool_uses_one_class() {
        let b = bank(12);
        let pools = b.draw_pools(4, 8, 3, TestPool::Comparison, 9).unwrap();
        assert_eq!(pools.test.len(), 3);
        assert!(pools.test.iter().all(|e| e.label == ClassId(2)));
        assert!(pools.train.iter().all(|p| p.len() == 8));
        // Held-out samples never appear in training pools.
        for t in &pools.test {
            assert!(!pools.train[1].contains(&t.features));
        }
    }

    #[test]
    fn balanced_pool_spreads_classes() {
        let b = bank(10);
        let pools = b.draw_pools(0, 5, 7, TestPool::Balanced, 1).unwrap();
        let counts: Vec<usize> = (0..3).map(|c| pools.test.iter().filter(|e| e.label.index() == c).count()).collect();
        assert_eq!(counts, vec![3, 2, 2]);
    }

    #[test]
    fn pools_are_seeded() {
        let b = bank(10);
        let a = b.draw_pools(1, 5, 2, TestPool::Comparison, 3).unwrap();
        assert_eq!(a, b.draw_pools(1, 5, 2, TestPool::Comparison, 3).unwrap());
        assert_ne!(a.train, b.draw_pools(2, 5, 2, TestPool::Comparison, 3).unwrap().train);
    }

    #[test]
    fn short_class_is_rejected() {
        let b = bank(6);
        assert!(matches!(
            b.draw_pools(0, 5, 2, TestPool::Comparison, 0),
            Err(PipelineError::InsufficientPool { class: ClassId(1), available: 6, needed: 7 })
        ));
    }

    #[test]
    fn unknown_label_is_rejected() {
        let classes = ClassSet::new(&[1.0]).unwrap();
        assert!(FeatureBank::from_rows(classes, 1, [(ClassId(2), vec![0.0])]).is_err());
    }

    #[test]
    fn generated_bank_has_fixed_width_features() {
        let classes = ClassSet::new(&[1.13, 0.44]).unwrap();
        let pipeline = FeaturePipeline::default();
        let b = FeatureBank::generate(&SensorModel::default(), &pipeline, &classes, 2, &PressRanges::default(), 5, true).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.dim(), 384);
        let seq = FeatureBank::generate(&SensorModel::default(), &pipeline, &classes, 2, &PressRanges::default(), 5, false).unwrap();
        assert_eq!(b, seq);
        assert!(b.class_samples(ClassId(1)).iter().all(|f| f.iter().any(|v| *v != 0.0)));
    }
}
