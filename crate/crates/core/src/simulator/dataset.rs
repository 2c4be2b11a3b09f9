use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::TrajectoryGenerator;
use super::{
    sample_pose_grid, sample_speeds, stream_rng, LabeledSample, MotionConfig, PoseGridSpec,
    SpeedModel, Trajectory2D,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, EulerAngles, Quaternion};

pub const DATASET_FORMAT: &str = "trajpose-dataset";
pub const DATASET_VERSION: u32 = 1;

const SPEED_STREAM: u64 = 0x5350_4545_44;
const TRAJ_STREAM: u64 = 0x5452_414a;

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub intrinsics: CameraIntrinsics,
    pub grid: PoseGridSpec,
    pub speeds: SpeedModel,
    pub motion: MotionConfig,
    pub seed: u64,
    pub pose_count: usize,
    pub sample_count: usize,
    /// Start-point draws rejected for leaving the image too soon.
    pub rejected_draws: usize,
    /// Grid poses left out under [`InfeasiblePose::Skip`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_poses: Vec<usize>,
}

/// What to do when a grid pose cannot produce a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InfeasiblePose {
    /// Abort generation, naming the pose.
    #[default]
    Fail,
    /// Drop every sample of that pose and record its id in the header.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    pose_id: usize,
    height_m: f64,
    quat: [f64; 4],
    euler_deg: [f64; 3],
    speed_mps: f64,
    points: Vec<[f64; 2]>,
}

/// One trajectory per (grid pose, sampled speed) pair. Each pair draws from
/// its own random stream, so the result is independent of thread count.
pub fn generate_dataset(
    spec: &PoseGridSpec,
    speeds: &SpeedModel,
    k: &CameraIntrinsics,
    cfg: &MotionConfig,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with(spec, speeds, k, cfg, seed, InfeasiblePose::Fail)
}

/// Like [`generate_dataset`], but with a choice of what happens to poses
/// whose visible ground cannot hold a `min_len` walk at the drawn speed.
pub fn generate_dataset_with(
    spec: &PoseGridSpec,
    speeds: &SpeedModel,
    k: &CameraIntrinsics,
    cfg: &MotionConfig,
    seed: u64,
    policy: InfeasiblePose,
) -> Result<Dataset> {
    k.validate()?;
    speeds.validate()?;
    cfg.validate()?;
    let grid = sample_pose_grid(spec)?;

    let per_pose: Vec<Result<Vec<(LabeledSample, usize)>>> = grid
        .par_iter()
        .map(|gp| {
            let describe = || {
                let [yaw, pitch, roll] = gp.euler.to_degrees();
                format!(
                    "pose #{} (height {:.3} m, yaw {yaw:.3}°, pitch {pitch:.3}°, roll {roll:.3}°)",
                    gp.id, gp.pose.height_m
                )
            };
            let generator = TrajectoryGenerator::new(gp.pose, *k, *cfg).map_err(|e| match e {
                Error::NoGroundVisible => Error::GenerationFailure {
                    pose: format!("{} with no visible ground", describe()),
                    retries: 0,
                },
                other => other,
            })?;
            let vs = sample_speeds(speeds, &mut stream_rng(seed, gp.id as u64, 0, SPEED_STREAM))?;
            vs.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let mut rng = stream_rng(seed, gp.id as u64, j as u64, TRAJ_STREAM);
                    let (trajectory, rejected) =
                        generator
                            .generate_counted(v, &mut rng)
                            .map_err(|e| match e {
                                Error::GenerationFailure { retries, .. } => {
                                    Error::GenerationFailure {
                                        pose: describe(),
                                        retries,
                                    }
                                }
                                other => other,
                            })?;
                    Ok((
                        LabeledSample {
                            pose_id: gp.id,
                            pose: gp.pose,
                            euler: gp.euler,
                            speed: v,
                            trajectory,
                        },
                        rejected,
                    ))
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(grid.len() * speeds.samples_per_pose);
    let mut rejected_draws = 0;
    let mut skipped_poses = Vec::new();
    for (gp, r) in grid.iter().zip(per_pose) {
        let pose_samples = match (r, policy) {
            (Ok(v), _) => v,
            (Err(Error::GenerationFailure { .. }), InfeasiblePose::Skip) => {
                skipped_poses.push(gp.id);
                continue;
            }
            (Err(e), _) => return Err(e),
        };
        for (sample, rejected) in pose_samples {
            samples.push(sample);
            rejected_draws += rejected;
        }
    }
    if samples.is_empty() {
        return Err(Error::GenerationFailure {
            pose: "every grid pose".into(),
            retries: cfg.max_retries,
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            intrinsics: *k,
            grid: *spec,
            speeds: *speeds,
            motion: *cfg,
            seed,
            pose_count: grid.len() - skipped_poses.len(),
            sample_count: samples.len(),
            rejected_draws,
            skipped_poses,
        },
        samples,
    })
}

/// JSON Lines: header on the first line, then one sample per line.
pub fn write_dataset<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, &dataset.header)?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        let rec = SampleRecord {
            pose_id: s.pose_id,
            height_m: s.pose.height_m,
            quat: s.pose.orientation.to_array(),
            euler_deg: s.euler.to_degrees(),
            speed_mps: s.speed,
            points: s.trajectory.points.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let malformed = |line: usize, message: String| Error::MalformedRow { line, message };

    let header_line = lines
        .next()
        .ok_or_else(|| malformed(1, "missing dataset header".into()))??;
    let version = serde_json::from_str::<serde_json::Value>(&header_line)
        .ok()
        .and_then(|v| v.get("version").and_then(|v| v.as_u64()));
    if let Some(found) = version {
        if found != DATASET_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: found as u32,
                supported: DATASET_VERSION,
            });
        }
    }
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| malformed(1, format!("header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(malformed(
            1,
            format!("unexpected format tag {:?}", header.format),
        ));
    }
    let yaw = header.grid.nominal_euler.yaw;

    let mut samples = Vec::with_capacity(header.sample_count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        let pose = CameraPose::new(rec.height_m, Quaternion::from_array(rec.quat), yaw)
            .map_err(|e| malformed(line_no, e.to_string()))?;
        let [y, p, r] = rec.euler_deg;
        samples.push(LabeledSample {
            pose_id: rec.pose_id,
            pose,
            euler: EulerAngles::from_degrees(y, p, r),
            speed: rec.speed_mps,
            trajectory: Trajectory2D::new(rec.points),
        });
    }
    if samples.len() != header.sample_count {
        return Err(malformed(
            samples.len() + 2,
            format!(
                "header announces {} samples, file holds {}",
                header.sample_count,
                samples.len()
            ),
        ));
    }
    Ok(Dataset { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn small_spec() -> PoseGridSpec {
        let mut spec = PoseGridSpec::around(5.0, EulerAngles::from_degrees(0.0, -30.0, 0.0));
        spec.height_step_m = 1.5;
        spec.angle_step_rad = 7.5f64.to_radians();
        spec
    }

    fn k1000() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    #[test]
    fn counts_and_label_histogram() {
        let speeds = SpeedModel::default();
        let ds = generate_dataset(
            &small_spec(),
            &speeds,
            &k1000(),
            &MotionConfig::default(),
            1,
        )
        .unwrap();
        let grid = sample_pose_grid(&small_spec()).unwrap();
        assert_eq!(ds.samples.len(), grid.len() * 10);
        assert_eq!(ds.header.pose_count, grid.len());
        let mut hist: HashMap<usize, usize> = HashMap::new();
        for s in &ds.samples {
            *hist.entry(s.pose_id).or_default() += 1;
            assert!(s.speed > 0.0);
        }
        assert_eq!(hist.len(), grid.len());
        assert!(hist.values().all(|c| *c == 10));
    }

    #[test]
    fn fast_walkers_skip_low_steep_poses() {
        // Heights 2 and 8 m: at 2 m and -45 deg the visible ground is far
        // shorter than an 11-point walk at 3 m/s.
        let spec = PoseGridSpec {
            nominal_height_m: 5.0,
            nominal_euler: EulerAngles::from_degrees(0.0, -40.0, 0.0),
            height_span_m: 3.0,
            height_step_m: 6.0,
            angle_span_rad: 5f64.to_radians(),
            angle_step_rad: 10f64.to_radians(),
        };
        let speeds = SpeedModel {
            mean: 3.0,
            samples_per_pose: 3,
            ..SpeedModel::default()
        };
        let (k, m) = (k1000(), MotionConfig::default());
        assert!(matches!(
            generate_dataset(&spec, &speeds, &k, &m, 1),
            Err(Error::GenerationFailure { .. })
        ));
        let ds = generate_dataset_with(&spec, &speeds, &k, &m, 1, InfeasiblePose::Skip).unwrap();
        let grid = sample_pose_grid(&spec).unwrap();
        assert!(!ds.header.skipped_poses.is_empty());
        assert_eq!(
            ds.header.pose_count,
            grid.len() - ds.header.skipped_poses.len()
        );
        assert_eq!(ds.samples.len(), ds.header.pose_count * 3);
        assert!(ds
            .samples
            .iter()
            .all(|s| !ds.header.skipped_poses.contains(&s.pose_id)));
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("skipped_poses"));
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let make = |seed| {
            let ds = generate_dataset(
                &small_spec(),
                &SpeedModel::default(),
                &k1000(),
                &MotionConfig::default(),
                seed,
            )
            .unwrap();
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf).unwrap();
            buf
        };
        assert_eq!(make(7), make(7));
        assert_ne!(make(7), make(8));
    }

    #[test]
    fn file_round_trip_preserves_samples() {
        let ds = generate_dataset(
            &small_spec(),
            &SpeedModel::default(),
            &k1000(),
            &MotionConfig::default(),
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        write_dataset(&ds, File::create(&path).unwrap()).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.header, ds.header);
        assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.speed, b.speed);
            assert_eq!(a.pose, b.pose);
        }
    }

    #[test]
    fn corrupted_line_is_reported() {
        let ds = generate_dataset(
            &small_spec(),
            &SpeedModel::default(),
            &k1000(),
            &MotionConfig::default(),
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[5] = lines[5].replace("\"points\"", "\"pints\"");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generation_failure_names_the_pose() {
        let cfg = MotionConfig {
            min_len: 31,
            max_retries: 5,
            ..MotionConfig::default()
        };
        let mut spec = small_spec();
        spec.nominal_euler = EulerAngles::from_degrees(0.0, -75.0, 0.0);
        match generate_dataset(&spec, &SpeedModel::default(), &k1000(), &cfg, 1) {
            Err(Error::GenerationFailure { pose, retries }) => {
                assert!(pose.starts_with("pose #"), "{pose}");
                assert_eq!(retries, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let ds = generate_dataset(
            &small_spec(),
            &SpeedModel::default(),
            &k1000(),
            &MotionConfig::default(),
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replacen("\"version\":1", "\"version\":2", 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.jsonl");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }
}
