//! `trajpose` command line: `gen`, `train`, `eval`, `sweep`, `reproject`.

mod config;
mod reproject;

pub use config::{EvalSettings, GridSettings, PoseDeg, RunConfig, TrainSettings};
pub use reproject::{overlay_svg, parse_polygon, reproject_polygon};

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, ingest_tracks_file, line_plot_svg, predict_pose, speed_sweep, sweep_csv, sweep_svg,
    synthetic_test_set, EvaluationReport, Panel, Series,
};
use crate::geometry::{quat_to_euler, CameraPose, Quaternion};
use crate::regressor::LossBreakdown;
use crate::simulator::{generate_dataset, read_dataset, write_dataset};
use crate::training::{
    fresh_model, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Trainer,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_CSV_FILE: &str = "loss.csv";
pub const LOSS_SVG_FILE: &str = "loss.svg";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_SVG_FILE: &str = "sweep.svg";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const OVERLAY_FILE: &str = "reprojection.svg";

#[derive(Debug, Parser)]
#[command(
    name = "trajpose",
    version,
    about = "Camera height and tilt from pedestrian trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configuration's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic training dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a regressor on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file [default: <out>/dataset.jsonl].
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict the camera pose from tracks or a synthetic test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint [default: <out>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Track CSV with header `track_id,frame,u,v`.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Frame rate of the track file (overrides eval.fps).
        #[arg(long)]
        fps: Option<f64>,
        /// True pose as `height,yaw,pitch,roll` (metres, degrees).
        #[arg(long)]
        truth: Option<String>,
    },
    /// Train one model per synthetic speed and evaluate each on one test set.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated training speeds in m/s.
        #[arg(long)]
        speeds: String,
    },
    /// Draw a ground polygon reprojected through a predicted pose.
    Reproject {
        #[command(flatten)]
        common: Common,
        /// True pose as `height,yaw,pitch,roll`.
        #[arg(long)]
        truth: String,
        /// Predicted pose as `height,yaw,pitch,roll`.
        #[arg(long, conflicts_with = "report")]
        predicted: Option<String>,
        /// Evaluation report whose aggregate pose is used as the prediction.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Polygon vertices in pixels under the true pose: `u,v;u,v;...`.
        #[arg(long, allow_hyphen_values = true)]
        polygon: String,
    },
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.output_dir = out.clone();
        }
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            out: cfg.output_dir.clone(),
            cfg,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

pub fn cmd_gen(common: &Common) -> Result<()> {
    let ctx = Context::new(common)?;
    let c = &ctx.cfg;
    let ds = generate_dataset(&c.grid_spec(), &c.speeds, &c.intrinsics, &c.motion, c.seed)?;
    let path = ctx.path(DATASET_FILE);
    write_dataset(&ds, fs::File::create(&path)?)?;
    let h = &ds.header;
    println!(
        "{} poses, {} samples ({} start draws rejected) -> {}",
        h.pose_count,
        h.sample_count,
        h.rejected_draws,
        path.display()
    );
    Ok(())
}

fn loss_csv(history: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch,total,location,orientation\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            l.total,
            l.location,
            l.orientation
        );
    }
    out
}

fn loss_svg(history: &[LossBreakdown]) -> String {
    let series = |name: &str, f: fn(&LossBreakdown) -> f64| Series {
        name: name.into(),
        points: history
            .iter()
            .enumerate()
            .map(|(i, l)| ((i + 1) as f64, f(l)))
            .collect(),
    };
    line_plot_svg(
        "Training loss",
        "epoch",
        &[Panel {
            y_label: "mean loss".into(),
            series: vec![
                series("total", |l| l.total),
                series("location", |l| l.location),
                series("orientation", |l| l.orientation),
            ],
        }],
    )
}

pub fn cmd_train(common: &Common, dataset: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let ctx = Context::new(common)?;
    let c = &ctx.cfg;
    let ds_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path(DATASET_FILE));
    let ds = read_dataset(&ds_path)?;
    if ds.header.intrinsics != c.intrinsics {
        return Err(Error::Config(format!(
            "intrinsics differ from those of dataset {}",
            ds_path.display()
        )));
    }
    let k = ds.header.intrinsics;
    let tc = c.train_config();

    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.meta.model != c.model {
                return Err(Error::Config(format!(
                    "model section differs from checkpoint {}",
                    p.display()
                )));
            }
            let adam = ck.adam.ok_or_else(|| {
                Error::InvalidArgument(format!("checkpoint {} has no optimizer state", p.display()))
            })?;
            eprintln!("resuming from {} at epoch {}", p.display(), ck.meta.epoch);
            Trainer::new(ck.model, &ds.samples, &k, tc)?.resume(
                adam,
                ck.meta.epoch,
                ck.meta.loss_history,
            )?
        }
        None => Trainer::new(fresh_model(&c.model, c.seed)?, &ds.samples, &k, tc)?,
    };

    let total = tc.total_epochs();
    let ckpt_path = ctx.path(CHECKPOINT_FILE);
    let started = std::time::Instant::now();
    while trainer.epoch < total {
        let l = trainer.run_epoch()?;
        eprintln!(
            "epoch {:>4}/{total}  loss {:.5}  location {:.5}  orientation {:.5}  ({:.1}s)",
            trainer.epoch,
            l.total,
            l.location,
            l.orientation,
            started.elapsed().as_secs_f64()
        );
        if trainer.epoch % tc.epochs_per_round == 0 || trainer.epoch == total {
            let mut meta = CheckpointMeta::new(k, c.model.clone());
            meta.grid = Some(ds.header.grid);
            meta.seed = c.seed;
            meta.epoch = trainer.epoch;
            meta.loss_history = trainer.history.clone();
            meta.train = Some(tc);
            let ck = Checkpoint {
                meta,
                model: trainer.model.clone(),
                adam: Some(trainer.adam.clone()),
            };
            save_checkpoint(&ckpt_path, &ck)?;
            eprintln!(
                "round {} checkpoint -> {}",
                trainer.epoch.div_ceil(tc.epochs_per_round),
                ckpt_path.display()
            );
        }
    }
    write_file(&ctx.path(LOSS_CSV_FILE), &loss_csv(&trainer.history))?;
    write_file(&ctx.path(LOSS_SVG_FILE), &loss_svg(&trainer.history))?;
    let last = trainer.history.last().copied().unwrap_or_default();
    println!(
        "trained {} epochs on {} samples, final loss {:.5} -> {}",
        trainer.epoch,
        ds.samples.len(),
        last.total,
        ckpt_path.display()
    );
    Ok(())
}

fn print_report(report: &EvaluationReport) {
    let a = &report.aggregate;
    let angles = a
        .euler_deg
        .map(|e| format!("yaw {:.3}, pitch {:.3}, roll {:.3} deg", e[0], e[1], e[2]))
        .unwrap_or_else(|| "at gimbal lock".into());
    println!(
        "K = {} ({} rejected): height {:.4} m, {angles}",
        report.k,
        report.rejected.len(),
        a.height_m
    );
    if let Some(e) = &report.errors {
        println!("t_err {:.4} m, r_err {:.4} deg", e.t_err_m, e.r_err_deg);
    }
}

pub fn cmd_eval(
    common: &Common,
    checkpoint: Option<&Path>,
    tracks: Option<&Path>,
    fps: Option<f64>,
    truth: Option<&str>,
) -> Result<()> {
    let ctx = Context::new(common)?;
    let c = &ctx.cfg;
    let ck_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path(CHECKPOINT_FILE));
    let ck = load_checkpoint(&ck_path)?;
    let k = ck.meta.intrinsics;
    if k != c.intrinsics {
        return Err(Error::Config(format!(
            "intrinsics differ from those of checkpoint {}",
            ck_path.display()
        )));
    }
    let yaw_ref = ck
        .meta
        .grid
        .map_or(c.nominal_pose.euler().yaw, |g| g.nominal_euler.yaw);
    let truth = truth.map(PoseDeg::parse).transpose()?;

    let (trajectories, truth) = match tracks {
        Some(path) => {
            let fps = fps.or(c.eval.fps).ok_or_else(|| {
                Error::Config("track evaluation needs a frame rate (--fps or eval.fps)".into())
            })?;
            let ingested = ingest_tracks_file(path, fps, &c.motion, &k, c.eval.window_overlap)?;
            if let Some(w) = ingested.warning() {
                eprintln!("warning: {w}");
            }
            (ingested.trajectories, truth.map(|t| t.pose()).transpose()?)
        }
        None => {
            let pose = truth.or(c.eval.test_pose).ok_or_else(|| {
                Error::Config("synthetic evaluation needs eval.test_pose or --truth".into())
            })?;
            let pose = pose.pose()?;
            let test = synthetic_test_set(
                &pose,
                &c.test_speeds(),
                c.eval.test_trajectories,
                &k,
                &c.motion,
                c.seed,
            )?;
            (test.trajectories, Some(pose))
        }
    };

    let mut report = predict_pose(&ck.model, &trajectories, &k, yaw_ref)?;
    if let Some(t) = &truth {
        report = evaluate(report, t);
    }
    let path = ctx.path(REPORT_FILE);
    write_file(&path, &(report.to_json()? + "\n"))?;
    print_report(&report);
    println!("report -> {}", path.display());
    Ok(())
}

fn parse_speeds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("speed {x:?} is not a number")))
        })
        .collect()
}

pub fn cmd_sweep(common: &Common, speeds: &str) -> Result<()> {
    let ctx = Context::new(common)?;
    let c = &ctx.cfg;
    let speeds = parse_speeds(speeds)?;
    if speeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "a sweep needs at least two speeds".into(),
        ));
    }
    let pose = c
        .eval
        .test_pose
        .ok_or_else(|| Error::Config("sweep needs eval.test_pose".into()))?
        .pose()?;
    let test = synthetic_test_set(
        &pose,
        &c.test_speeds(),
        c.eval.test_trajectories,
        &c.intrinsics,
        &c.motion,
        c.seed,
    )?;
    let result = speed_sweep(
        &c.experiment(),
        &test,
        &speeds,
        |s, outcome| match outcome {
            Ok(p) => eprintln!(
                "speed {s} m/s: t_err {:.4} m, r_err {:.4} deg ({} infeasible poses skipped)",
                p.t_err_m, p.r_err_deg, p.skipped_poses
            ),
            Err(e) => eprintln!("speed {s} m/s failed: [{}] {e}", e.code()),
        },
    )?;
    write_file(&ctx.path(SWEEP_CSV_FILE), &sweep_csv(&result))?;
    write_file(&ctx.path(SWEEP_SVG_FILE), &sweep_svg(&result))?;
    write_file(
        &ctx.path(SWEEP_JSON_FILE),
        &(serde_json::to_string_pretty(&result)? + "\n"),
    )?;
    println!(
        "{} of {} speeds succeeded -> {}",
        result.points.len(),
        speeds.len(),
        ctx.path(SWEEP_CSV_FILE).display()
    );
    Ok(())
}

fn pose_from_report(path: &Path) -> Result<CameraPose> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let bad = || Error::CorruptFile {
        path: path.to_path_buf(),
        message: "no aggregate height_m/quat".into(),
    };
    let agg = v.get("aggregate").ok_or_else(bad)?;
    let h = agg
        .get("height_m")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(bad)?;
    let q: Vec<f64> = agg
        .get("quat")
        .and_then(serde_json::Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .filter_map(serde_json::Value::as_f64)
        .collect();
    let q: [f64; 4] = q.try_into().map_err(|_| bad())?;
    let q = Quaternion::from_array(q).normalized();
    let yaw = quat_to_euler(q).map_or(0.0, |e| e.yaw);
    CameraPose::new(h, q, yaw)
}

pub fn cmd_reproject(
    common: &Common,
    truth: &str,
    predicted: Option<&str>,
    report: Option<&Path>,
    polygon: &str,
) -> Result<()> {
    let ctx = Context::new(common)?;
    let k = ctx.cfg.intrinsics;
    let truth = PoseDeg::parse(truth)?.pose()?;
    let predicted = match (predicted, report) {
        (Some(p), _) => PoseDeg::parse(p)?.pose()?,
        (None, Some(r)) => pose_from_report(r)?,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "give --predicted or --report".into(),
            ));
        }
    };
    let original = parse_polygon(polygon)?;
    let reprojected = reproject_polygon(&truth, &predicted, &k, &original)?;
    let path = ctx.path(OVERLAY_FILE);
    write_file(&path, &overlay_svg(&k, &original, &reprojected))?;
    let worst = original
        .iter()
        .zip(&reprojected)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    println!(
        "max vertex displacement {worst:.3} px -> {}",
        path.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { common } => cmd_gen(common),
        Command::Train {
            common,
            dataset,
            resume,
        } => cmd_train(common, dataset.as_deref(), resume.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            tracks,
            fps,
            truth,
        } => cmd_eval(
            common,
            checkpoint.as_deref(),
            tracks.as_deref(),
            *fps,
            truth.as_deref(),
        ),
        Command::Sweep { common, speeds } => cmd_sweep(common, speeds),
        Command::Reproject {
            common,
            truth,
            predicted,
            report,
            polygon,
        } => cmd_reproject(
            common,
            truth,
            predicted.as_deref(),
            report.as_deref(),
            polygon,
        ),
    }
}

/// Single-line `error[CODE]: message`.
pub fn format_error(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", e.code())
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", format_error(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_common_flags() {
        let cli = Cli::try_parse_from([
            "trajpose", "sweep", "--config", "c.json", "--seed", "7", "--out", "o", "--speeds",
            "1,2",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep { common, speeds } => {
                assert_eq!(common.seed, Some(7));
                assert_eq!(speeds, "1,2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn speed_lists() {
        assert_eq!(parse_speeds("0.6, 1.0,1.4").unwrap(), vec![0.6, 1.0, 1.4]);
        assert!(parse_speeds("1,x").is_err());
    }

    #[test]
    fn errors_are_one_line_with_code() {
        let e = Error::Config("bad\nthing".into());
        let s = format_error(&e);
        assert!(s.starts_with("error[E_CONFIG]: "));
        assert!(!s.contains('\n'));
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let h = vec![LossBreakdown::default(); 50];
        assert_eq!(loss_csv(&h).lines().count(), 51);
    }
}
