//! Loading-period frame selection.
//!
//! A press video is reduced to a fixed number of frames spanning the loading
//! period: the initial frame is subtracted from every frame, contact starts at
//! the first frame whose mean absolute intensity exceeds a threshold, the
//! loading period ends at the intensity peak, and intermediate frames are
//! taken at equal intervals in between.

use thiserror::Error;

use crate::image::Frame;
use crate::sensor_sim::io::{Record, FLAG_REFERENCE, FLAG_SELECTED};
use crate::sensor_sim::{ClassId, PressVideo};

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no frame exceeds the contact threshold {threshold}")]
    NoContact { threshold: f64 },
    #[error("intensity peak at frame {last} precedes contact at frame {first}")]
    DegenerateWindow { first: usize, last: usize },
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("malformed sample record: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    /// Contact threshold on the mean absolute subtracted intensity.
    pub threshold: f64,
    pub n_intermediate: usize,
}

/// Default contact threshold for the simulated sensor. It sits above the
/// subtracted noise floor at the default noise level and below the signal of
/// the first loading frame of the slowest noise-free press.
pub const SIM_THRESHOLD: f64 = 1.0;

impl Default for SelectConfig {
    fn default() -> Self {
        Self { threshold: SIM_THRESHOLD, n_intermediate: 2 }
    }
}

impl SelectConfig {
    /// Three-frame variant: one intermediate frame.
    pub fn single_intermediate() -> Self {
        Self { n_intermediate: 1, ..Self::default() }
    }

    pub fn frames_total(&self) -> usize {
        self.n_intermediate + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    pub first_idx: usize,
    pub last_idx: usize,
    /// Sorted; starts with `first_idx` and ends with `last_idx`. May repeat
    /// indices when the window is shorter than the number of frames requested.
    pub selected: Vec<usize>,
    pub threshold: f64,
}

/// Classifier input for one press.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    /// Background-subtracted selected frames.
    pub frames: Vec<Frame>,
    /// The subtracted initial frame; `reference + frames[k]` restores the raw frame.
    pub reference: Frame,
    pub timestamps: Vec<f64>,
    pub label: Option<ClassId>,
}

impl SampleTensor {
    /// Raw (un-subtracted) selected frames.
    pub fn raw_frames(&self) -> Vec<Frame> {
        self.frames.iter().map(|f| f.add(&self.reference)).collect()
    }

    pub fn to_record(&self, compliance: f64) -> Record {
        let mut frames = Vec::with_capacity(self.frames.len() + 1);
        frames.push(self.reference.clone());
        frames.extend(self.frames.iter().cloned());
        let mut timestamps = Vec::with_capacity(frames.len());
        timestamps.push(0.0);
        timestamps.extend(&self.timestamps);
        Record {
            flags: FLAG_SELECTED | FLAG_REFERENCE,
            label: self.label.map_or(0, |l| l.0),
            compliance,
            frames,
            markers: Vec::new(),
            timestamps,
        }
    }

    pub fn from_record(mut r: Record) -> Result<Self, SelectError> {
        if r.flags != FLAG_SELECTED | FLAG_REFERENCE {
            return Err(SelectError::Malformed(format!("flags {:#x}", r.flags)));
        }
        if r.frames.len() < 2 || r.timestamps.len() != r.frames.len() {
            return Err(SelectError::Malformed("needs a reference and at least one frame".into()));
        }
        let reference = r.frames.remove(0);
        r.timestamps.remove(0);
        Ok(SampleTensor {
            frames: r.frames,
            reference,
            timestamps: r.timestamps,
            label: (r.label != 0).then_some(ClassId(r.label)),
        })
    }
}

/// Subtracts the first frame from every frame.
pub fn background_subtract(video: &PressVideo) -> PressVideo {
    let mut out = video.clone();
    if let Some(first) = video.frames.first() {
        out.frames = video.frames.iter().map(|f| f.sub(first)).collect();
    }
    out
}

/// Mean absolute intensity per frame.
pub fn mean_intensity_series(video: &PressVideo) -> Vec<f64> {
    video.frames.iter().map(Frame::mean_abs).collect()
}

/// Locates the loading window in a per-frame mean-intensity series.
///
/// Contact is the first frame strictly above `threshold`; the end is the
/// earliest frame with maximal intensity.
pub fn loading_window(series: &[f64], threshold: f64) -> Result<(usize, usize), SelectError> {
    if !(threshold > 0.0) {
        return Err(SelectError::InvalidThreshold(threshold));
    }
    let first = series
        .iter()
        .position(|&m| m > threshold)
        .ok_or(SelectError::NoContact { threshold })?;
    let mut last = 0;
    for (t, &m) in series.iter().enumerate() {
        if m > series[last] {
            last = t;
        }
    }
    if last < first {
        return Err(SelectError::DegenerateWindow { first, last });
    }
    Ok((first, last))
}

/// Loading window of a background-subtracted video.
pub fn detect_loading_window(video: &PressVideo, threshold: f64) -> Result<(usize, usize), SelectError> {
    if video.is_empty() {
        return Err(SelectError::EmptyVideo);
    }
    loading_window(&mean_intensity_series(video), threshold)
}

/// Picks `first`, `n_intermediate` equally spaced indices (rounded half up), then `last`.
pub fn select_frames(window: (usize, usize), n_intermediate: usize, threshold: f64) -> FrameSelection {
    let (first, last) = window;
    debug_assert!(first <= last);
    let span = last - first;
    let parts = n_intermediate + 1;
    let mut selected = Vec::with_capacity(n_intermediate + 2);
    selected.push(first);
    for k in 1..=n_intermediate {
        // round(k * span / parts) with halves rounded up, in integers.
        let offset = (2 * k * span + parts) / (2 * parts);
        selected.push(first + offset);
    }
    selected.push(last);
    FrameSelection { first_idx: first, last_idx: last, selected, threshold }
}

/// Background subtraction, contact detection and frame selection in one step.
pub fn build_sample(video: &PressVideo, config: &SelectConfig) -> Result<SampleTensor, SelectError> {
    let (tensor, _) = build_sample_with_selection(video, config)?;
    Ok(tensor)
}

pub fn build_sample_with_selection(
    video: &PressVideo,
    config: &SelectConfig,
) -> Result<(SampleTensor, FrameSelection), SelectError> {
    if video.is_empty() {
        return Err(SelectError::EmptyVideo);
    }
    let subtracted = background_subtract(video);
    let window = detect_loading_window(&subtracted, config.threshold)?;
    let selection = select_frames(window, config.n_intermediate, config.threshold);
    let tensor = SampleTensor {
        frames: selection.selected.iter().map(|&i| subtracted.frames[i].clone()).collect(),
        reference: video.frames[0].clone(),
        timestamps: selection.selected.iter().map(|&i| video.timestamps[i]).collect(),
        label: Some(video.label),
    };
    Ok((tensor, selection))
}
