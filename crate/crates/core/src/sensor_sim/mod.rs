//! Synthetic vision-based tactile sensor.
//!
//! A press is modelled as a flat indenter moving into a compliant object:
//! indentation ramps linearly until it reaches `compliance * f_push`, holds
//! briefly, then retreats. Each frame renders a Gaussian contact glow whose
//! amplitude is proportional to the indentation, plus a regular grid of
//! markers displaced radially about the press center. Compliance is therefore
//! visible both in intensity and in marker motion.

pub mod io;

use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::image::Frame;
use crate::seed::{self, stream};

/// Compliance values (mm/N) of the five silicone reference objects, softest first.
pub const REFERENCE_COMPLIANCES: [f64; 5] = [1.13, 1.02, 0.79, 0.68, 0.44];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("compliance must be positive, got {0}")]
    NonPositiveCompliance(f64),
    #[error("loading phase spans {frames} frame(s), at least {needed} required; raise the frame rate")]
    LoadingTooShort { frames: usize, needed: usize },
    #[error("invalid press parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },
    #[error("inverted range for `{key}`: min {min} > max {max}")]
    InvertedRange { key: &'static str, min: f64, max: f64 },
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("per-class sample count must be at least 1")]
    NoSamples,
}

/// 1-based hardness class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl ClassId {
    /// Builds the id for a 0-based index.
    pub fn from_index(index: usize) -> Self {
        ClassId(index as u32 + 1)
    }

    /// 0-based position in tensors and class tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardnessClass {
    pub id: ClassId,
    /// Indentation per unit force, mm/N. Larger is softer.
    pub compliance: f64,
}

/// Reference classes with contiguous ids `1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    classes: Vec<HardnessClass>,
}

impl ClassSet {
    pub fn new(compliances: &[f64]) -> Result<Self, SimError> {
        if compliances.is_empty() {
            return Err(SimError::EmptyClassSet);
        }
        let classes = compliances
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c > 0.0 && c.is_finite() {
                    Ok(HardnessClass { id: ClassId::from_index(i), compliance: c })
                } else {
                    Err(SimError::NonPositiveCompliance(c))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { classes })
    }

    /// The five silicone objects, class 1 softest.
    pub fn reference() -> Self {
        Self::new(&REFERENCE_COMPLIANCES).expect("reference compliances are valid")
    }

    /// Scales the log-compliance gaps around their geometric mean.
    ///
    /// `1.0` is the identity, larger values spread the classes apart and
    /// values below one pull them together.
    pub fn with_separability(&self, separability: f64) -> Result<Self, SimError> {
        if !(separability > 0.0 && separability.is_finite()) {
            return Err(SimError::InvalidParam {
                key: "separability",
                reason: format!("must be positive, got {separability}"),
            });
        }
        let log_mean =
            self.classes.iter().map(|c| c.compliance.ln()).sum::<f64>() / self.classes.len() as f64;
        let scaled: Vec<f64> = self
            .classes
            .iter()
            .map(|c| (log_mean + separability * (c.compliance.ln() - log_mean)).exp())
            .collect();
        Self::new(&scaled)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HardnessClass> {
        self.classes.iter()
    }

    pub fn get(&self, id: ClassId) -> Option<&HardnessClass> {
        if id.0 == 0 {
            return None;
        }
        self.classes.get(id.index())
    }

    pub fn compliances(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.compliance).collect()
    }
}

/// Parameters of one press.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressParams {
    /// Maximum contact force, N.
    pub f_push: f64,
    /// Downward approach speed, mm/s.
    pub v_push: f64,
    /// Camera rate, Hz.
    pub frame_rate: f64,
    /// Standard deviation of additive intensity noise.
    pub noise_sigma: f64,
}

impl PressParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let check = |key: &'static str, ok: bool, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(SimError::InvalidParam { key, reason: format!("got {v}") })
            }
        };
        check("f_push", self.f_push > 0.0 && self.f_push.is_finite(), self.f_push)?;
        check("v_push", self.v_push > 0.0 && self.v_push.is_finite(), self.v_push)?;
        check("frame_rate", self.frame_rate > 0.0 && self.frame_rate.is_finite(), self.frame_rate)?;
        check("noise_sigma", self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(), self.noise_sigma)
    }
}

/// Sampling ranges for press parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressRanges {
    pub f_min: f64,
    pub f_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub frame_rate: f64,
    pub noise_sigma: f64,
}

impl Default for PressRanges {
    fn default() -> Self {
        Self { f_min: 1.0, f_max: 5.0, v_min: 20.0, v_max: 50.0, frame_rate: 25.0, noise_sigma: 0.5 }
    }
}

impl PressRanges {
    pub fn validate(&self) -> Result<(), SimError> {
        for (key, min, max) in [("f_push", self.f_min, self.f_max), ("v_push", self.v_min, self.v_max)] {
            if !(min.is_finite() && max.is_finite()) || min <= 0.0 {
                return Err(SimError::InvalidParam { key, reason: format!("range [{min}, {max}] must be positive") });
            }
            if min > max {
                return Err(SimError::InvertedRange { key, min, max });
            }
        }
        PressParams { f_push: self.f_min, v_push: self.v_min, frame_rate: self.frame_rate, noise_sigma: self.noise_sigma }
            .validate()
    }
}

/// Rendering and kinematics constants of the simulated sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub height: usize,
    pub width: usize,
    /// Markers per side of the square marker grid.
    pub marker_grid: usize,
    /// Width of the contact kernel, px.
    pub contact_sigma: f64,
    /// Contact glow per mm of indentation at the press center.
    pub intensity_gain: f64,
    /// Radial marker displacement gain, 1/mm.
    pub displacement_gain: f64,
    pub marker_amplitude: f64,
    pub marker_sigma: f64,
    /// Fraction of the approach speed at which the indenter advances once in contact.
    pub contact_speed_scale: f64,
    /// Retreat speed relative to the contact speed.
    pub unload_speed_ratio: f64,
    /// Duration before contact, s.
    pub pre_contact_s: f64,
    /// Dwell at peak indentation, s.
    pub hold_s: f64,
    /// Trailing no-contact frames.
    pub post_frames: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            marker_grid: 8,
            contact_sigma: 10.0,
            intensity_gain: 200.0,
            displacement_gain: 0.08,
            marker_amplitude: 1000.0,
            marker_sigma: 1.1,
            contact_speed_scale: 0.05,
            unload_speed_ratio: 4.0,
            pre_contact_s: 0.2,
            hold_s: 0.2,
            post_frames: 2,
        }
    }
}

/// Minimum number of loading frames a press must produce.
pub const MIN_LOADING_FRAMES: usize = 3;

/// Frame-indexed indentation profile of one press.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    /// Indentation depth per frame, mm.
    pub depths: Vec<f64>,
    /// First frame with non-zero indentation.
    pub contact_idx: usize,
    /// First frame at peak indentation.
    pub peak_idx: usize,
    /// Last frame of the hold at peak indentation.
    pub hold_end_idx: usize,
    pub peak_depth: f64,
}

impl Timeline {
    pub fn timestamps(&self, frame_rate: f64) -> Vec<f64> {
        (0..self.depths.len()).map(|j| j as f64 / frame_rate).collect()
    }
}

/// A recorded press.
#[derive(Debug, Clone, PartialEq)]
pub struct PressVideo {
    pub frames: Vec<Frame>,
    /// Marker positions per frame as `[x, y]`, px.
    pub markers: Vec<Vec<[f32; 2]>>,
    /// Seconds since the start of the recording.
    pub timestamps: Vec<f64>,
    pub label: ClassId,
    pub compliance: f64,
}

impl PressVideo {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), Frame::shape)
    }

    /// Mean intensity of every frame relative to the first.
    pub fn relative_mean_intensity(&self) -> Vec<f64> {
        let Some(first) = self.frames.first() else { return Vec::new() };
        let base = first.mean();
        self.frames.iter().map(|f| f.mean() - base).collect()
    }
}

impl SensorModel {
    /// Marker rest positions `[x, y]`, row-major over the grid.
    pub fn marker_rest_positions(&self) -> Vec<[f64; 2]> {
        let sx = self.width as f64 / self.marker_grid as f64;
        let sy = self.height as f64 / self.marker_grid as f64;
        let mut out = Vec::with_capacity(self.marker_grid * self.marker_grid);
        for gy in 0..self.marker_grid {
            for gx in 0..self.marker_grid {
                out.push([(gx as f64 + 0.5) * sx, (gy as f64 + 0.5) * sy]);
            }
        }
        out
    }

    pub fn press_center(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    /// Analytic marker displacement `[dx, dy]` at rest position `p` for indentation `depth`.
    pub fn marker_displacement(&self, p: [f64; 2], depth: f64) -> [f64; 2] {
        let c = self.press_center();
        let (rx, ry) = (p[0] - c[0], p[1] - c[1]);
        let k = self.contact_kernel(rx * rx + ry * ry);
        let s = self.displacement_gain * depth * k;
        [s * rx, s * ry]
    }

    fn contact_kernel(&self, r2: f64) -> f64 {
        (-r2 / (2.0 * self.contact_sigma * self.contact_sigma)).exp()
    }

    /// Per-marker contrast. The illumination falls off unevenly across the gel,
    /// so no two markers share the same contrast.
    fn marker_gain(&self, p: [f64; 2]) -> f64 {
        1.0 + 0.1 * p[0] / self.width as f64 + 0.037 * p[1] / self.height as f64
    }

    /// Builds the indentation profile for a press.
    pub fn timeline(&self, class: &HardnessClass, params: &PressParams) -> Result<Timeline, SimError> {
        if !(class.compliance > 0.0 && class.compliance.is_finite()) {
            return Err(SimError::NonPositiveCompliance(class.compliance));
        }
        params.validate()?;
        let fr = params.frame_rate;
        let peak_depth = class.compliance * params.f_push;
        let rate = self.contact_speed_scale * params.v_push;
        let per_frame = rate / fr;
        // Frames after contact start until the indenter reaches the peak.
        let n_load = (peak_depth / per_frame - 1e-9).ceil().max(1.0) as usize;
        if n_load < MIN_LOADING_FRAMES {
            return Err(SimError::LoadingTooShort { frames: n_load, needed: MIN_LOADING_FRAMES });
        }
        // Contact starts exactly on the last pre-contact frame.
        let n_pre = ((self.pre_contact_s * fr).ceil() as usize).max(1);
        let n_hold = ((self.hold_s * fr).round() as usize).max(1);
        let unload_per_frame = per_frame * self.unload_speed_ratio;
        let n_unload = (peak_depth / unload_per_frame - 1e-9).ceil().max(1.0) as usize;

        let mut depths = vec![0.0; n_pre];
        for j in 1..=n_load {
            depths.push((per_frame * j as f64).min(peak_depth));
        }
        depths.extend(std::iter::repeat_n(peak_depth, n_hold));
        for j in 1..=n_unload {
            depths.push((peak_depth - unload_per_frame * j as f64).max(0.0));
        }
        depths.extend(std::iter::repeat_n(0.0, self.post_frames));

        let contact_idx = n_pre;
        let peak_idx = n_pre + n_load - 1;
        Ok(Timeline { depths, contact_idx, peak_idx, hold_end_idx: peak_idx + n_hold, peak_depth })
    }

    /// Renders one noise-free frame at the given indentation together with marker positions.
    pub fn render(&self, depth: f64) -> (Frame, Vec<[f32; 2]>) {
        let (h, w) = (self.height, self.width);
        let c = self.press_center();
        let mut frame = Frame::from_fn(h, w, |y, x| {
            let (dx, dy) = (x as f64 - c[0], y as f64 - c[1]);
            (self.intensity_gain * depth * self.contact_kernel(dx * dx + dy * dy)) as f32
        });
        let rest = self.marker_rest_positions();
        let mut markers = Vec::with_capacity(rest.len());
        let reach = (4.0 * self.marker_sigma).ceil() as isize;
        let inv = 1.0 / (2.0 * self.marker_sigma * self.marker_sigma);
        for p in rest {
            let d = self.marker_displacement(p, depth);
            let (mx, my) = (p[0] + d[0], p[1] + d[1]);
            markers.push([mx as f32, my as f32]);
            let amp = self.marker_amplitude * self.marker_gain(p);
            let (cx, cy) = (mx.round() as isize, my.round() as isize);
            for y in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
                for x in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                    let (ex, ey) = (x as f64 - mx, y as f64 - my);
                    frame[(y as usize, x as usize)] += (amp * (-(ex * ex + ey * ey) * inv).exp()) as f32;
                }
            }
        }
        (frame, markers)
    }

    /// Simulates one press. Identical inputs give bit-identical output.
    pub fn simulate_press(
        &self,
        class: &HardnessClass,
        params: &PressParams,
        seed: u64,
    ) -> Result<PressVideo, SimError> {
        let timeline = self.timeline(class, params)?;
        let mut noise_rng = seed::rng(seed::derive(seed, stream::NOISE, 0));
        let mut frames = Vec::with_capacity(timeline.depths.len());
        let mut markers = Vec::with_capacity(timeline.depths.len());
        for &depth in &timeline.depths {
            let (mut frame, m) = self.render(depth);
            if params.noise_sigma > 0.0 {
                for v in frame.data_mut() {
                    let n: f64 = StandardNormal.sample(&mut noise_rng);
                    *v += (params.noise_sigma * n) as f32;
                }
            }
            frames.push(frame);
            markers.push(m);
        }
        Ok(PressVideo {
            frames,
            markers,
            timestamps: timeline.timestamps(params.frame_rate),
            label: class.id,
            compliance: class.compliance,
        })
    }
}

/// Draws press parameters uniformly and independently from `ranges`.
pub fn sample_press_params(ranges: &PressRanges, seed: u64) -> Result<PressParams, SimError> {
    ranges.validate()?;
    let mut rng = seed::rng(seed);
    let u_f: f64 = rng.random();
    let u_v: f64 = rng.random();
    Ok(PressParams {
        f_push: ranges.f_min + u_f * (ranges.f_max - ranges.f_min),
        v_push: ranges.v_min + u_v * (ranges.v_max - ranges.v_min),
        frame_rate: ranges.frame_rate,
        noise_sigma: ranges.noise_sigma,
    })
}

/// Everything needed to regenerate one dataset sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub class: HardnessClass,
    /// Position of this sample within its class.
    pub ordinal: usize,
    pub params: PressParams,
    pub seed: u64,
}

impl SampleSpec {
    pub fn simulate(&self, model: &SensorModel) -> Result<PressVideo, SimError> {
        model.simulate_press(&self.class, &self.params, self.seed)
    }
}

/// A simulated press with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPress {
    pub spec: SampleSpec,
    pub video: PressVideo,
}

/// Plans a dataset without rendering it: class-major, `per_class` samples each.
///
/// Sample seeds depend only on `(seed, class, ordinal)`, so growing
/// `per_class` keeps all earlier samples unchanged.
pub fn plan_dataset(
    classes: &ClassSet,
    per_class: usize,
    ranges: &PressRanges,
    seed: u64,
) -> Result<Vec<SampleSpec>, SimError> {
    if classes.is_empty() {
        return Err(SimError::EmptyClassSet);
    }
    if per_class == 0 {
        return Err(SimError::NoSamples);
    }
    ranges.validate()?;
    let mut specs = Vec::with_capacity(classes.len() * per_class);
    for class in classes.iter() {
        let class_seed = seed::derive(seed, stream::SAMPLE, u64::from(class.id.0));
        for ordinal in 0..per_class {
            let sample_seed = seed::derive(class_seed, stream::SAMPLE, ordinal as u64);
            let params = sample_press_params(ranges, seed::derive(sample_seed, stream::PARAMS, 0))?;
            specs.push(SampleSpec { class: *class, ordinal, params, seed: sample_seed });
        }
    }
    Ok(specs)
}

/// Generates `per_class` presses for every class.
pub fn generate_dataset(
    model: &SensorModel,
    classes: &ClassSet,
    per_class: usize,
    ranges: &PressRanges,
    seed: u64,
) -> Result<Vec<LabeledPress>, SimError> {
    plan_dataset(classes, per_class, ranges, seed)?
        .into_iter()
        .map(|spec| Ok(LabeledPress { video: spec.simulate(model)?, spec }))
        .collect()
}
