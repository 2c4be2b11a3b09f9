//! Synthetic training data: a pose grid around the nominal pose, Gaussian
//! walking speeds, and pinhole-projected pedestrian walks.

mod dataset;
mod region;
mod trajectory;

pub use dataset::{
    generate_dataset, generate_dataset_with, read_dataset, write_dataset, Dataset, DatasetHeader,
    InfeasiblePose, DATASET_FORMAT, DATASET_VERSION,
};
pub use region::{visible_ground_region, GroundPolygon, DEFAULT_MAX_RANGE_M};
pub use trajectory::{generate_trajectory, TrajectoryGenerator};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, EulerAngles};

const GRID_EPS: f64 = 1e-9;

/// Uniform height x pitch x roll lattice centred on the nominal pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGridSpec {
    pub nominal_height_m: f64,
    /// Nominal yaw/pitch/roll in radians. Yaw is held fixed over the grid.
    pub nominal_euler: EulerAngles,
    pub height_span_m: f64,
    pub height_step_m: f64,
    pub angle_span_rad: f64,
    pub angle_step_rad: f64,
}

impl PoseGridSpec {
    /// Grid with the default spans: ±3 m in 0.4 m steps, ±15° in 2° steps.
    pub fn around(nominal_height_m: f64, nominal_euler: EulerAngles) -> Self {
        Self {
            nominal_height_m,
            nominal_euler,
            height_span_m: 3.0,
            height_step_m: 0.4,
            angle_span_rad: 15f64.to_radians(),
            angle_step_rad: 2f64.to_radians(),
        }
    }

    pub fn nominal_pose(&self) -> Result<CameraPose> {
        CameraPose::from_euler(self.nominal_height_m, self.nominal_euler)
    }

    fn validate(&self) -> Result<()> {
        let vals = [
            self.nominal_height_m,
            self.height_span_m,
            self.height_step_m,
            self.angle_span_rad,
            self.angle_step_rad,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("pose grid values must be finite".into()));
        }
        if self.nominal_height_m <= 0.0 {
            return Err(Error::Config("nominal height must be positive".into()));
        }
        if self.height_span_m < 0.0 || self.angle_span_rad < 0.0 {
            return Err(Error::Config("grid spans must be non-negative".into()));
        }
        if self.height_step_m <= 0.0 || self.angle_step_rad <= 0.0 {
            return Err(Error::Config("grid steps must be positive".into()));
        }
        Ok(())
    }
}

/// Values `center - span + i * step` for every `i` that stays within `center + span`.
fn axis_values(center: f64, span: f64, step: f64) -> Vec<f64> {
    let n = (2.0 * span / step + GRID_EPS).floor() as usize + 1;
    (0..n).map(|i| center - span + i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPose {
    pub id: usize,
    pub pose: CameraPose,
    pub euler: EulerAngles,
}

/// Enumerates the grid in height-major, then pitch, then roll order.
///
/// The lattice is anchored at `nominal - span` on every axis, non-positive
/// heights are dropped and the nominal pose itself is always excluded.
pub fn sample_pose_grid(spec: &PoseGridSpec) -> Result<Vec<GridPose>> {
    spec.validate()?;
    let heights: Vec<f64> = axis_values(
        spec.nominal_height_m,
        spec.height_span_m,
        spec.height_step_m,
    )
    .into_iter()
    .filter(|h| *h > GRID_EPS)
    .collect();
    let e0 = spec.nominal_euler;
    let pitches = axis_values(e0.pitch, spec.angle_span_rad, spec.angle_step_rad);
    let rolls = axis_values(e0.roll, spec.angle_span_rad, spec.angle_step_rad);

    let mut out = Vec::with_capacity(heights.len() * pitches.len() * rolls.len());
    for &h in &heights {
        for &p in &pitches {
            for &r in &rolls {
                let is_nominal = (h - spec.nominal_height_m).abs() < GRID_EPS
                    && (p - e0.pitch).abs() < GRID_EPS
                    && (r - e0.roll).abs() < GRID_EPS;
                if is_nominal {
                    continue;
                }
                let euler = EulerAngles::new(e0.yaw, p, r);
                out.push(GridPose {
                    id: out.len(),
                    pose: CameraPose::from_euler(h, euler)?,
                    euler,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "{} heights x {} pitches x {} rolls leaves no pose besides the nominal one",
            heights.len(),
            pitches.len(),
            rolls.len()
        )));
    }
    Ok(out)
}

/// Gaussian walking-speed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedModel {
    pub mean: f64,
    pub std: f64,
    pub samples_per_pose: usize,
}

impl Default for SpeedModel {
    fn default() -> Self {
        Self {
            mean: 1.4,
            std: 0.1,
            samples_per_pose: 10,
        }
    }
}

impl SpeedModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return Err(Error::Config(format!(
                "speed mean must be positive, got {}",
                self.mean
            )));
        }
        if !(self.std.is_finite() && self.std >= 0.0) {
            return Err(Error::Config(format!(
                "speed std must be non-negative, got {}",
                self.std
            )));
        }
        if self.samples_per_pose == 0 {
            return Err(Error::Config("samples_per_pose must be at least 1".into()));
        }
        Ok(())
    }

    /// One positive draw; non-positive draws are redrawn.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.std == 0.0 {
            return Ok(self.mean);
        }
        let normal = Normal::new(self.mean, self.std)
            .map_err(|e| Error::Config(format!("speed distribution: {e}")))?;
        loop {
            let v = normal.sample(rng);
            if v > 0.0 {
                return Ok(v);
            }
        }
    }
}

pub fn sample_speeds<R: Rng + ?Sized>(model: &SpeedModel, rng: &mut R) -> Result<Vec<f64>> {
    model.validate()?;
    (0..model.samples_per_pose)
        .map(|_| model.draw(rng))
        .collect()
}

/// Pedestrian motion and trajectory windowing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Seconds between consecutive trajectory points.
    pub dt: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Standard deviation of the per-step heading change, radians.
    pub heading_jitter_std: f64,
    pub max_retries: usize,
    /// Farthest forward ground distance used when sampling start points.
    pub max_range_m: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            min_len: 11,
            max_len: 31,
            heading_jitter_std: 0.0,
            max_retries: 100,
            max_range_m: DEFAULT_MAX_RANGE_M,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 2 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(self.heading_jitter_std.is_finite() && self.heading_jitter_std >= 0.0) {
            return Err(Error::Config(
                "heading_jitter_std must be non-negative".into(),
            ));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be at least 1".into()));
        }
        if !(self.max_range_m.is_finite() && self.max_range_m > 0.0) {
            return Err(Error::Config("max_range_m must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered pixel coordinates of one pedestrian track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub points: Vec<[f64; 2]>,
}

impl Trajectory2D {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every step has zero length (a standing pedestrian).
    pub fn is_degenerate(&self) -> bool {
        self.points.windows(2).all(|w| w[0] == w[1])
    }

    pub fn validate(&self, k: &CameraIntrinsics, cfg: &MotionConfig) -> Result<()> {
        if self.len() < cfg.min_len || self.len() > cfg.max_len {
            return Err(Error::InputDomain(format!(
                "trajectory length {} outside [{}, {}]",
                self.len(),
                cfg.min_len,
                cfg.max_len
            )));
        }
        if let Some(p) = self.points.iter().find(|p| !k.contains(p[0], p[1])) {
            return Err(Error::InputDomain(format!(
                "point ({}, {}) outside the {}x{} image",
                p[0], p[1], k.width, k.height
            )));
        }
        Ok(())
    }
}

/// A synthetic training record: trajectory plus the pose and speed that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub pose_id: usize,
    pub pose: CameraPose,
    pub euler: EulerAngles,
    pub speed: f64,
    pub trajectory: Trajectory2D,
}

/// Independent random stream for `(seed, a, b, tag)`, so results do not depend
/// on iteration order or thread count.
pub fn stream_rng(seed: u64, a: u64, b: u64, tag: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (chunk, word) in bytes.chunks_exact_mut(8).zip([seed, a, b, tag]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
