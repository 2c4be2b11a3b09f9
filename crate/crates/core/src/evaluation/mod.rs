//! Test-time aggregation over many trajectories, error reporting, track
//! ingestion and the synthetic speed sweep.

mod plot;
mod sweep;
mod tracks;

pub use plot::{line_plot_svg, Panel, Series};
pub use sweep::{
    speed_sweep, sweep_csv, sweep_svg, synthetic_test_set, SpeedSweepResult, SweepFailure,
    SweepPoint, SyntheticExperiment, TestSet,
};
pub use tracks::{frame_stride, ingest_tracks, ingest_tracks_file, IngestResult};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    aggregate_quaternions, euler_to_quat, orientation_error, position_error, quat_to_euler,
    CameraIntrinsics, CameraPose, EulerAngles, Quaternion,
};
use crate::regressor::{PosePrediction, RegressorModel};
use crate::simulator::Trajectory2D;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPrediction {
    pub index: usize,
    pub height_m: f64,
    /// Unit quaternion `[w, x, y, z]`.
    pub quat: [f64; 4],
    /// Yaw, pitch, roll in degrees; absent at gimbal lock.
    pub euler_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedTrajectory {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatePose {
    pub height_m: f64,
    pub quat: [f64; 4],
    pub euler_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthPose {
    pub height_m: f64,
    pub quat: [f64; 4],
    pub euler_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseErrors {
    pub t_err_m: f64,
    pub r_err_rad: f64,
    pub r_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    /// Number of trajectories that produced a prediction.
    pub k: usize,
    pub aggregate: AggregatePose,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthPose>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<PoseErrors>,
    pub predictions: Vec<TrajectoryPrediction>,
    pub rejected: Vec<RejectedTrajectory>,
}

fn euler_deg(q: Quaternion) -> Option<[f64; 3]> {
    quat_to_euler(q).ok().map(EulerAngles::to_degrees)
}

impl EvaluationReport {
    pub fn aggregate_orientation(&self) -> Quaternion {
        Quaternion::from_array(self.aggregate.quat)
    }

    /// The aggregate as a pose; fails if the mean height is not positive.
    pub fn aggregate_pose(&self, yaw_ref: f64) -> Result<CameraPose> {
        CameraPose::new(
            self.aggregate.height_m,
            self.aggregate_orientation(),
            yaw_ref,
        )
    }

    /// `(t_err, r_err)` of every individual prediction against `truth`.
    pub fn per_trajectory_errors(&self, truth: &CameraPose) -> Vec<(f64, f64)> {
        self.predictions
            .iter()
            .map(|p| {
                (
                    position_error(truth.height_m, p.height_m),
                    orientation_error(truth.orientation, Quaternion::from_array(p.quat)),
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Aggregates already computed predictions. `results[i]` belongs to
/// trajectory `i`; failures are recorded and skipped.
pub fn aggregate_predictions(
    results: Vec<Result<PosePrediction>>,
    yaw_ref: f64,
) -> Result<EvaluationReport> {
    let mut predictions = Vec::new();
    let mut rejected = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => predictions.push(TrajectoryPrediction {
                index,
                height_m: p.height_m,
                quat: p.quat_unit.to_array(),
                euler_deg: euler_deg(p.quat_unit),
            }),
            Err(e) => rejected.push(RejectedTrajectory {
                index,
                reason: e.to_string(),
            }),
        }
    }
    if predictions.is_empty() {
        return Err(Error::NoPrediction {
            rejected: rejected.len(),
        });
    }
    let k = predictions.len();
    let height_m = predictions.iter().map(|p| p.height_m).sum::<f64>() / k as f64;
    let qs: Vec<Quaternion> = predictions
        .iter()
        .map(|p| Quaternion::from_array(p.quat))
        .collect();
    let mut q = aggregate_quaternions(&qs)?;
    if let Ok(e) = quat_to_euler(q) {
        q = euler_to_quat(EulerAngles::new(yaw_ref, e.pitch, e.roll)).canonical();
    }
    Ok(EvaluationReport {
        k,
        aggregate: AggregatePose {
            height_m,
            quat: q.to_array(),
            euler_deg: euler_deg(q),
        },
        truth: None,
        errors: None,
        predictions,
        rejected,
    })
}

/// Runs the model on every trajectory and averages the predictions:
/// arithmetic mean of heights, sign-aligned mean of quaternions, with the
/// yaw of the result reset to `yaw_ref`.
pub fn predict_pose(
    model: &RegressorModel,
    trajectories: &[Trajectory2D],
    k: &CameraIntrinsics,
    yaw_ref: f64,
) -> Result<EvaluationReport> {
    if trajectories.is_empty() {
        return Err(Error::NoPrediction { rejected: 0 });
    }
    aggregate_predictions(model.predict_many(trajectories, k), yaw_ref)
}

/// Fills translation and rotation errors of the aggregate against `truth`.
pub fn evaluate(mut report: EvaluationReport, truth: &CameraPose) -> EvaluationReport {
    let r = orientation_error(truth.orientation, report.aggregate_orientation());
    report.errors = Some(PoseErrors {
        t_err_m: position_error(truth.height_m, report.aggregate.height_m),
        r_err_rad: r,
        r_err_deg: r.to_degrees(),
    });
    report.truth = Some(TruthPose {
        height_m: truth.height_m,
        quat: truth.orientation.to_array(),
        euler_deg: euler_deg(truth.orientation),
    });
    report
}
