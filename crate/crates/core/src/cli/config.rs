//! JSON run configuration. Angles are degrees here and radians everywhere else.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::SyntheticExperiment;
use crate::geometry::{CameraIntrinsics, CameraPose, EulerAngles};
use crate::regressor::RegressorConfig;
use crate::simulator::{MotionConfig, PoseGridSpec, SpeedModel};
use crate::training::TrainConfig;

/// Height plus yaw/pitch/roll in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDeg {
    pub height_m: f64,
    #[serde(default)]
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

impl PoseDeg {
    pub fn euler(&self) -> EulerAngles {
        EulerAngles::from_degrees(self.yaw_deg, self.pitch_deg, self.roll_deg)
    }

    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::from_euler(self.height_m, self.euler())
    }

    /// Parses `height,yaw,pitch,roll` (metres, degrees).
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::InvalidArgument(format!("pose {s:?} is not height,yaw,pitch,roll"))
            })?;
        match v[..] {
            [height_m, yaw_deg, pitch_deg, roll_deg] => Ok(Self {
                height_m,
                yaw_deg,
                pitch_deg,
                roll_deg,
            }),
            _ => Err(Error::InvalidArgument(format!(
                "pose {s:?} needs 4 values (height,yaw,pitch,roll), got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub height_span_m: f64,
    pub height_step_m: f64,
    pub angle_span_deg: f64,
    pub angle_step_deg: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            height_span_m: 3.0,
            height_step_m: 0.4,
            angle_span_deg: 15.0,
            angle_step_deg: 2.0,
        }
    }
}

/// Training options; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub rounds: usize,
    pub alpha: f64,
    pub shuffle: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs_per_round: t.epochs_per_round,
            rounds: t.rounds,
            alpha: t.alpha,
            shuffle: t.shuffle,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            clip_grad_norm: t.clip_grad_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Pose used for synthetic test sets when `--truth` is not given.
    pub test_pose: Option<PoseDeg>,
    pub test_trajectories: usize,
    pub test_speed_mean: f64,
    pub test_speed_std: f64,
    /// Frame rate of track CSV files.
    pub fps: Option<f64>,
    /// Points shared by consecutive windows cut from one track.
    pub window_overlap: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            test_pose: None,
            test_trajectories: 100,
            test_speed_mean: 1.4,
            test_speed_std: 0.1,
            fps: None,
            window_overlap: 0,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub intrinsics: CameraIntrinsics,
    pub nominal_pose: PoseDeg,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub speeds: SpeedModel,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub model: RegressorConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics
            .validate()
            .map_err(|e| Error::Config(format!("intrinsics: {e}")))?;
        self.nominal_pose
            .pose()
            .map_err(|e| Error::Config(format!("nominal_pose: {e}")))?;
        self.speeds.validate()?;
        self.motion.validate()?;
        self.train_config().validate()?;
        if self.eval.test_trajectories == 0 {
            return Err(Error::Config(
                "eval.test_trajectories must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> PoseGridSpec {
        PoseGridSpec {
            nominal_height_m: self.nominal_pose.height_m,
            nominal_euler: self.nominal_pose.euler(),
            height_span_m: self.grid.height_span_m,
            height_step_m: self.grid.height_step_m,
            angle_span_rad: self.grid.angle_span_deg.to_radians(),
            angle_step_rad: self.grid.angle_step_deg.to_radians(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs_per_round: t.epochs_per_round,
            rounds: t.rounds,
            alpha: t.alpha,
            seed: self.seed,
            shuffle: t.shuffle,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            clip_grad_norm: t.clip_grad_norm,
        }
    }

    pub fn test_speeds(&self) -> SpeedModel {
        SpeedModel {
            mean: self.eval.test_speed_mean,
            std: self.eval.test_speed_std,
            samples_per_pose: 1,
        }
    }

    pub fn experiment(&self) -> SyntheticExperiment {
        SyntheticExperiment {
            intrinsics: self.intrinsics,
            grid: self.grid_spec(),
            speeds: self.speeds,
            motion: self.motion,
            model: self.model.clone(),
            train: self.train_config(),
            seed: self.seed,
        }
    }
}
