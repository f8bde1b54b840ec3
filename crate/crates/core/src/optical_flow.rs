//! Lucas-Kanade flow features.
//!
//! Corners are ranked by the Shi-Tomasi score (the smaller eigenvalue of the
//! local structure tensor) on the first selected frame and tracked through
//! consecutive selected-frame pairs with single-level iterative Lucas-Kanade.
//! The per-pair flows of every point, in score order, form the feature vector.

use thiserror::Error;

use crate::frame_select::SampleTensor;
use crate::image::Frame;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("need at least 2 frames to compute flow, got {0}")]
    TooFewFrames(usize),
    #[error("frame shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("invalid tracker setting `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkConfig {
    /// Number of points kept (`N`).
    pub max_points: usize,
    /// Side of the square integration window, odd.
    pub window: usize,
    pub max_iters: usize,
    /// Stop once an update is shorter than this, px.
    pub epsilon: f64,
    /// Minimum separation between detected corners, px.
    pub min_distance: f64,
    /// Corners scoring below this fraction of the best score are dropped.
    pub quality_level: f64,
    /// Points whose per-pixel structure-tensor minimum eigenvalue falls below
    /// this are reported as untracked.
    pub min_eigenvalue: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        Self {
            max_points: 64,
            window: 7,
            max_iters: 10,
            epsilon: 0.01,
            min_distance: 3.0,
            quality_level: 0.01,
            min_eigenvalue: 1e-4,
        }
    }
}

impl LkConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |key, reason: &str| Err(FlowError::InvalidConfig { key, reason: reason.to_string() });
        if self.max_points == 0 {
            return bad("max_points", "must be at least 1");
        }
        if self.window < 3 || self.window % 2 == 0 {
            return bad("window", "must be odd and at least 3");
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.min_distance >= 0.0) {
            return bad("min_distance", "must be non-negative");
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.window / 2
    }

    /// Feature vector length for a stack of `frames` selected frames.
    pub fn feature_len(&self, frames: usize) -> usize {
        2 * self.max_points * frames.saturating_sub(1)
    }
}

/// A detected corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Flow of one point between two frames. Untracked points carry zero flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub flow: [f64; 2],
    pub tracked: bool,
}

/// Per-point flows of one sample, flattened in score order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Points actually detected (the rest is padding).
    pub n_points: usize,
}

/// Central-difference gradients `(d/dx, d/dy)`, one-sided at the border.
pub fn gradients(frame: &Frame) -> (Frame, Frame) {
    let (h, w) = frame.shape();
    let gx = Frame::from_fn(h, w, |y, x| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        if r == l {
            0.0
        } else {
            (frame.get(y, r) - frame.get(y, l)) / (r - l) as f32
        }
    });
    let gy = Frame::from_fn(h, w, |y, x| {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(h - 1));
        if u == d {
            0.0
        } else {
            (frame.get(d, x) - frame.get(u, x)) / (d - u) as f32
        }
    });
    (gx, gy)
}

/// Smaller eigenvalue of the symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_trace = 0.5 * (a + c);
    let diff = 0.5 * (a - c);
    half_trace - (diff * diff + b * b).sqrt()
}

/// Shi-Tomasi response at every pixel whose window fits inside the frame; 0 elsewhere.
pub fn corner_response(frame: &Frame, window: usize) -> Vec<f64> {
    let (h, w) = frame.shape();
    let half = window / 2;
    let (gx, gy) = gradients(frame);
    let mut out = vec![0.0; h * w];
    if h < window || w < window {
        return out;
    }
    // Prefix sums of the structure-tensor entries.
    let stride = w + 1;
    let mut sxx = vec![0.0f64; (h + 1) * stride];
    let mut sxy = vec![0.0f64; (h + 1) * stride];
    let mut syy = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        for x in 0..w {
            let ix = f64::from(gx.get(y, x));
            let iy = f64::from(gy.get(y, x));
            let i = (y + 1) * stride + x + 1;
            let up = y * stride + x + 1;
            let left = (y + 1) * stride + x;
            let diag = y * stride + x;
            sxx[i] = ix * ix + sxx[up] + sxx[left] - sxx[diag];
            sxy[i] = ix * iy + sxy[up] + sxy[left] - sxy[diag];
            syy[i] = iy * iy + syy[up] + syy[left] - syy[diag];
        }
    }
    let rect = |s: &[f64], y0: usize, x0: usize, y1: usize, x1: usize| {
        s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]
    };
    for y in half..h - half {
        for x in half..w - half {
            let (y0, x0, y1, x1) = (y - half, x - half, y + half + 1, x + half + 1);
            let a = rect(&sxx, y0, x0, y1, x1);
            let b = rect(&sxy, y0, x0, y1, x1);
            let c = rect(&syy, y0, x0, y1, x1);
            out[y * w + x] = min_eigenvalue(a, b, c).max(0.0);
        }
    }
    out
}

/// Detects up to `max_points` corners, best first, at least `min_distance` apart.
///
/// Candidates are 3x3 local maxima of the response above `quality_level`
/// times the best response. Equal scores are ordered by row, then column.
pub fn detect_corners(frame: &Frame, max_points: usize, config: &LkConfig) -> Vec<Corner> {
    let (h, w) = frame.shape();
    let response = corner_response(frame, config.window);
    let best = response.iter().cloned().fold(0.0, f64::max);
    // Relative floor also guards against float residue on flat frames.
    if !(best > 1e-9) {
        return Vec::new();
    }
    let floor = best * config.quality_level;
    let mut candidates = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let r = response[y * w + x];
            if r <= floor {
                continue;
            }
            let is_max = (y - 1..=y + 1)
                .all(|yy| (x - 1..=x + 1).all(|xx| response[yy * w + xx] <= r));
            if is_max {
                candidates.push((r, y, x));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let min_d2 = config.min_distance * config.min_distance;
    let mut out: Vec<Corner> = Vec::with_capacity(max_points);
    for (score, y, x) in candidates {
        if out.len() == max_points {
            break;
        }
        let (xf, yf) = (x as f64, y as f64);
        if out.iter().all(|c| (c.x - xf).powi(2) + (c.y - yf).powi(2) >= min_d2) {
            out.push(Corner { x: xf, y: yf, score });
        }
    }
    out
}

/// Tracks `points` (`[x, y]`) from `prev` to `next`.
pub fn lucas_kanade(
    prev: &Frame,
    next: &Frame,
    points: &[[f64; 2]],
    config: &LkConfig,
) -> Result<Vec<Track>, FlowError> {
    if prev.shape() != next.shape() {
        return Err(FlowError::ShapeMismatch(prev.shape(), next.shape()));
    }
    let (gx, gy) = gradients(prev);
    Ok(points.iter().map(|&p| track_point(prev, next, &gx, &gy, p, config)).collect())
}

const UNTRACKED: Track = Track { flow: [0.0, 0.0], tracked: false };

fn track_point(prev: &Frame, next: &Frame, gx: &Frame, gy: &Frame, p: [f64; 2], config: &LkConfig) -> Track {
    let (h, w) = prev.shape();
    // Windows reaching past the border sample replicated edge pixels.
    let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= w as f64 - 1.0 && y <= h as f64 - 1.0;
    if !inside(p[0], p[1]) {
        return UNTRACKED;
    }
    let n = config.window * config.window;
    let mut template = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let half_i = config.half() as isize;
    for dy in -half_i..=half_i {
        for dx in -half_i..=half_i {
            let (x, y) = (p[0] + dx as f64, p[1] + dy as f64);
            let ix = gx.sample(y, x);
            let iy = gy.sample(y, x);
            template.push(prev.sample(y, x));
            grads.push((ix, iy, x, y));
            a += ix * ix;
            b += ix * iy;
            c += iy * iy;
        }
    }
    if min_eigenvalue(a, b, c) / (n as f64) < config.min_eigenvalue {
        return UNTRACKED;
    }
    let det = a * c - b * b;
    let mut d = [0.0f64, 0.0f64];
    for _ in 0..config.max_iters {
        let (mut bx, mut by) = (0.0, 0.0);
        for (t, &(ix, iy, x, y)) in template.iter().zip(&grads) {
            let diff = t - next.sample(y + d[1], x + d[0]);
            bx += diff * ix;
            by += diff * iy;
        }
        let ux = (c * bx - b * by) / det;
        let uy = (a * by - b * bx) / det;
        d[0] += ux;
        d[1] += uy;
        if !inside(p[0] + d[0], p[1] + d[1]) {
            return UNTRACKED;
        }
        if ux.hypot(uy) < config.epsilon {
            break;
        }
    }
    if d[0].is_finite() && d[1].is_finite() {
        Track { flow: d, tracked: true }
    } else {
        UNTRACKED
    }
}

/// Builds the fixed-length flow feature vector of a sample.
///
/// Layout is point-major: for point `i` (score order) and pair `k`, the flow
/// sits at `2 * (i * (F - 1) + k)`. A point that is lost stays at zero for
/// the remaining pairs.
pub fn extract_features(sample: &SampleTensor, config: &LkConfig) -> Result<FeatureVector, FlowError> {
    let n_frames = sample.frames.len();
    if n_frames < 2 {
        return Err(FlowError::TooFewFrames(n_frames));
    }
    let pairs = n_frames - 1;
    let frames = sample.raw_frames();
    let corners = detect_corners(&frames[0], config.max_points, config);
    let mut values = vec![0.0; config.feature_len(n_frames)];
    let mut points: Vec<[f64; 2]> = corners.iter().map(|c| [c.x, c.y]).collect();
    let mut alive = vec![true; points.len()];
    for k in 0..pairs {
        let tracks = lucas_kanade(&frames[k], &frames[k + 1], &points, config)?;
        for (i, t) in tracks.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            if !t.tracked {
                alive[i] = false;
                continue;
            }
            let base = 2 * (i * pairs + k);
            values[base] = t.flow[0];
            values[base + 1] = t.flow[1];
            points[i][0] += t.flow[0];
            points[i][1] += t.flow[1];
        }
    }
    Ok(FeatureVector { values, n_points: corners.len() })
}
