//! Train-on-grid / test-on-held-out-pose experiments and the speed sweep.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::plot::{line_plot_svg, Panel, Series};
use super::{evaluate, predict_pose, EvaluationReport};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::regressor::{LossBreakdown, RegressorConfig, RegressorModel};
use crate::simulator::{
    generate_dataset_with, generate_trajectory, stream_rng, InfeasiblePose, MotionConfig,
    PoseGridSpec, SpeedModel, Trajectory2D,
};
use crate::training::{fresh_model, train, TrainConfig};

const TEST_STREAM: u64 = 0x5445_5354;

/// Trajectories from one known pose, used as a shared test set.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub id: String,
    pub pose: CameraPose,
    pub trajectories: Vec<Trajectory2D>,
}

/// Draws `count` trajectories from `pose`, each with its own speed.
pub fn synthetic_test_set(
    pose: &CameraPose,
    speeds: &SpeedModel,
    count: usize,
    k: &CameraIntrinsics,
    motion: &MotionConfig,
    seed: u64,
) -> Result<TestSet> {
    speeds.validate()?;
    let mut rng = stream_rng(seed, 0, 0, TEST_STREAM);
    let trajectories = (0..count)
        .map(|_| {
            let s = speeds.draw(&mut rng)?;
            generate_trajectory(pose, s, k, motion, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let e = pose.euler()?.to_degrees();
    Ok(TestSet {
        id: format!(
            "synthetic h={:.3} yaw={:.3} pitch={:.3} roll={:.3} speed={}+-{} n={count} seed={seed}",
            pose.height_m, e[0], e[1], e[2], speeds.mean, speeds.std
        ),
        pose: *pose,
        trajectories,
    })
}

/// Everything needed to generate a training set and train one model on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExperiment {
    pub intrinsics: CameraIntrinsics,
    pub grid: PoseGridSpec,
    pub speeds: SpeedModel,
    pub motion: MotionConfig,
    pub model: RegressorConfig,
    pub train: TrainConfig,
    /// Seeds dataset generation and model initialisation.
    pub seed: u64,
}

impl SyntheticExperiment {
    pub fn train_model(&self) -> Result<(RegressorModel, Vec<LossBreakdown>)> {
        self.train_model_with(InfeasiblePose::Fail)
            .map(|(model, history, _)| (model, history))
    }

    /// Also returns the grid poses that were skipped as infeasible.
    pub fn train_model_with(
        &self,
        policy: InfeasiblePose,
    ) -> Result<(RegressorModel, Vec<LossBreakdown>, Vec<usize>)> {
        let ds = generate_dataset_with(
            &self.grid,
            &self.speeds,
            &self.intrinsics,
            &self.motion,
            self.seed,
            policy,
        )?;
        let model = fresh_model(&self.model, self.seed)?;
        let (model, history) = train(model, &ds.samples, &self.intrinsics, &self.train)?;
        Ok((model, history, ds.header.skipped_poses))
    }

    /// Trains and evaluates the aggregate prediction on `test`.
    pub fn run(
        &self,
        test: &TestSet,
    ) -> Result<(RegressorModel, Vec<LossBreakdown>, EvaluationReport)> {
        self.run_with(test, InfeasiblePose::Fail)
            .map(|(model, history, report, _)| (model, history, report))
    }

    pub fn run_with(
        &self,
        test: &TestSet,
        policy: InfeasiblePose,
    ) -> Result<(
        RegressorModel,
        Vec<LossBreakdown>,
        EvaluationReport,
        Vec<usize>,
    )> {
        let (model, history, skipped) = self.train_model_with(policy)?;
        let yaw_ref = self.grid.nominal_euler.yaw;
        let report = evaluate(
            predict_pose(&model, &test.trajectories, &self.intrinsics, yaw_ref)?,
            &test.pose,
        );
        Ok((model, history, report, skipped))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub speed_mps: f64,
    pub t_err_m: f64,
    pub r_err_deg: f64,
    /// Grid poses with no room for a `min_len` walk at this speed.
    pub skipped_poses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub speed_mps: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedSweepResult {
    pub test_set_id: String,
    pub points: Vec<SweepPoint>,
    pub failures: Vec<SweepFailure>,
}

impl SpeedSweepResult {
    pub fn point(&self, speed: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| (p.speed_mps - speed).abs() < 1e-9)
    }
}

/// For every speed `s`, trains a fresh model (same seed) on data with
/// `SpeedModel { mean: s, ..base.speeds }` and evaluates it on `test`.
/// Fast speeds can outrun the visible ground of low, steep poses; such poses
/// are left out of that speed's training set and counted in the point.
/// A failing speed is recorded and the sweep continues; the sweep fails only
/// if no speed succeeds. `progress` sees each speed's outcome as it finishes.
pub fn speed_sweep(
    base: &SyntheticExperiment,
    test: &TestSet,
    speeds: &[f64],
    mut progress: impl FnMut(f64, &Result<SweepPoint>),
) -> Result<SpeedSweepResult> {
    if speeds.is_empty() {
        return Err(Error::InvalidArgument(
            "speed sweep needs at least one speed".into(),
        ));
    }
    if speeds.windows(2).any(|w| w[1] <= w[0])
        || speeds.iter().any(|s| !(s.is_finite() && *s > 0.0))
    {
        return Err(Error::InvalidArgument(format!(
            "sweep speeds must be positive and strictly increasing, got {speeds:?}"
        )));
    }
    let mut result = SpeedSweepResult {
        test_set_id: test.id.clone(),
        points: Vec::new(),
        failures: Vec::new(),
    };
    for &s in speeds {
        let mut exp = base.clone();
        exp.speeds.mean = s;
        let outcome =
            exp.run_with(test, InfeasiblePose::Skip)
                .and_then(|(_, _, report, skipped)| {
                    let e = report.errors.ok_or_else(|| {
                        Error::NumericFailure("evaluation produced no errors".into())
                    })?;
                    Ok(SweepPoint {
                        speed_mps: s,
                        t_err_m: e.t_err_m,
                        r_err_deg: e.r_err_deg,
                        skipped_poses: skipped.len(),
                    })
                });
        progress(s, &outcome);
        match outcome {
            Ok(p) => result.points.push(p),
            Err(e) => result.failures.push(SweepFailure {
                speed_mps: s,
                message: format!("speed {s} m/s: {e}"),
            }),
        }
    }
    if result.points.is_empty() {
        return Err(Error::NumericFailure(format!(
            "every sweep speed failed; first: {}",
            result.failures[0].message
        )));
    }
    Ok(result)
}

/// `speed_mps,t_err_m,r_err_deg` with one row per successful speed.
pub fn sweep_csv(result: &SpeedSweepResult) -> String {
    let mut out = String::from("speed_mps,t_err_m,r_err_deg\n");
    for p in &result.points {
        let _ = writeln!(out, "{},{},{}", p.speed_mps, p.t_err_m, p.r_err_deg);
    }
    out
}

pub fn sweep_svg(result: &SpeedSweepResult) -> String {
    let series = |name: &str, f: fn(&SweepPoint) -> f64| Series {
        name: name.into(),
        points: result.points.iter().map(|p| (p.speed_mps, f(p))).collect(),
    };
    line_plot_svg(
        "Error vs. synthetic training speed",
        "training speed (m/s)",
        &[
            Panel {
                y_label: "location error (m)".into(),
                series: vec![series("location", |p| p.t_err_m)],
            },
            Panel {
                y_label: "orientation error (deg)".into(),
                series: vec![series("orientation", |p| p.r_err_deg)],
            },
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    fn tiny_experiment() -> SyntheticExperiment {
        let nominal = EulerAngles::from_degrees(0.0, -30.0, 0.0);
        let mut grid = PoseGridSpec::around(5.0, nominal);
        grid.height_span_m = 1.0;
        grid.height_step_m = 1.0;
        grid.angle_span_rad = 5f64.to_radians();
        grid.angle_step_rad = 5f64.to_radians();
        SyntheticExperiment {
            intrinsics: k(),
            grid,
            speeds: SpeedModel {
                samples_per_pose: 2,
                ..SpeedModel::default()
            },
            motion: MotionConfig {
                min_len: 6,
                max_len: 8,
                ..MotionConfig::default()
            },
            model: crate::regressor::tests::tiny_config(),
            train: TrainConfig {
                epochs_per_round: 2,
                ..TrainConfig::default()
            },
            seed: 3,
        }
    }

    fn test_set(exp: &SyntheticExperiment) -> TestSet {
        let pose = CameraPose::from_euler(5.2, EulerAngles::from_degrees(0.0, -31.0, 1.0)).unwrap();
        synthetic_test_set(
            &pose,
            &SpeedModel::default(),
            5,
            &exp.intrinsics,
            &exp.motion,
            11,
        )
        .unwrap()
    }

    #[test]
    fn test_set_is_reproducible() {
        let exp = tiny_experiment();
        let a = test_set(&exp);
        assert_eq!(a, test_set(&exp));
        assert_eq!(a.trajectories.len(), 5);
    }

    #[test]
    fn single_speed_sweep_gives_one_point() {
        let exp = tiny_experiment();
        let test = test_set(&exp);
        let mut seen = Vec::new();
        let r = speed_sweep(&exp, &test, &[1.4], |s, o| seen.push((s, o.is_ok()))).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(seen, vec![(1.4, true)]);
        let csv = sweep_csv(&r);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("speed_mps,t_err_m,r_err_deg\n"));
        let svg = sweep_svg(&r);
        assert!(svg.contains("location") && svg.contains("orientation"));
    }

    #[test]
    fn rejects_bad_speed_lists() {
        let exp = tiny_experiment();
        let test = test_set(&exp);
        assert!(speed_sweep(&exp, &test, &[], |_, _| {}).is_err());
        assert!(speed_sweep(&exp, &test, &[1.4, 1.0], |_, _| {}).is_err());
    }

    #[test]
    fn failing_speeds_are_recorded() {
        let mut exp = tiny_experiment();
        exp.motion.max_retries = 1;
        exp.motion.min_len = exp.motion.max_len;
        exp.grid.nominal_euler = EulerAngles::from_degrees(0.0, -80.0, 0.0);
        exp.grid.nominal_height_m = 1.5;
        exp.grid.height_span_m = 0.0;
        let test = test_set(&tiny_experiment());
        // Fast speeds cannot fit a full-length walk in the tiny footprint.
        match speed_sweep(&exp, &test, &[20.0, 40.0], |_, _| {}) {
            Err(Error::NumericFailure(msg)) => assert!(msg.contains("speed 20 m/s")),
            other => panic!("{other:?}"),
        }
    }
}
