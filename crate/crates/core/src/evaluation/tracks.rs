//! Pre-tracked pedestrian points (`track_id,frame,u,v`) to test trajectories.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::simulator::{MotionConfig, Trajectory2D};

const HEADER: [&str; 4] = ["track_id", "frame", "u", "v"];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    pub trajectories: Vec<Trajectory2D>,
    pub tracks: usize,
    pub frame_stride: u64,
    /// Windows discarded for frame gaps or points outside the image.
    pub windows_dropped: usize,
}

impl IngestResult {
    pub fn warning(&self) -> Option<String> {
        self.trajectories.is_empty().then(|| {
            format!(
                "no usable trajectories from {} tracks ({} windows dropped)",
                self.tracks, self.windows_dropped
            )
        })
    }
}

/// Frames between consecutive trajectory points: `round(fps * dt)`.
pub fn frame_stride(fps: f64, dt: f64) -> Result<u64> {
    let s = (fps * dt).round();
    if !(fps.is_finite() && fps > 0.0 && s >= 1.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fps {fps} and dt {dt} do not give a frame stride of at least 1"
        )));
    }
    Ok(s as u64)
}

struct Row {
    frame: u64,
    point: [f64; 2],
}

/// Resamples each track to one point every `round(fps * dt)` frames
/// (counting from its first frame) and cuts it into windows of
/// `motion.max_len` points advancing by `max_len - overlap`. A trailing
/// window shorter than `max_len` is kept if it has at least `motion.min_len`
/// points. Windows containing a frame gap or a point outside the image are
/// dropped.
pub fn ingest_tracks<R: Read>(
    reader: R,
    fps: f64,
    motion: &MotionConfig,
    k: &CameraIntrinsics,
    overlap: usize,
) -> Result<IngestResult> {
    motion.validate()?;
    if overlap >= motion.max_len {
        return Err(Error::InvalidArgument(format!(
            "window overlap {overlap} must be below max_len {}",
            motion.max_len
        )));
    }
    let stride = frame_stride(fps, motion.dt)?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::MalformedRow {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            line: 1,
            message: format!(
                "expected header {:?}, got {:?}",
                HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut tracks: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::MalformedRow { line, message };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let frame: u64 = rec[1]
            .parse()
            .map_err(|_| bad(format!("frame {:?} is not a non-negative integer", &rec[1])))?;
        let coord = |i: usize, name: &str| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{name} {:?} is not a finite number", &rec[i])))
        };
        let point = [coord(2, "u")?, coord(3, "v")?];
        let id = rec[0].to_string();
        let rows = tracks.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some(prev) = rows.last() {
            if frame <= prev.frame {
                return Err(bad(format!(
                    "track {id}: frame {frame} does not increase (previous {})",
                    prev.frame
                )));
            }
        }
        rows.push(Row { frame, point });
    }

    let step = motion.max_len - overlap;
    let mut out = IngestResult {
        trajectories: Vec::new(),
        tracks: order.len(),
        frame_stride: stride,
        windows_dropped: 0,
    };
    for id in &order {
        let rows = &tracks[id];
        let f0 = rows[0].frame;
        let kept: Vec<&Row> = rows
            .iter()
            .filter(|r| (r.frame - f0) % stride == 0)
            .collect();
        let mut start = 0;
        while start < kept.len() {
            let end = (start + motion.max_len).min(kept.len());
            if end - start < motion.min_len {
                break;
            }
            let w = &kept[start..end];
            let gap = w.windows(2).any(|p| p[1].frame - p[0].frame > stride);
            let outside = w.iter().any(|r| !k.contains(r.point[0], r.point[1]));
            if gap || outside {
                out.windows_dropped += 1;
            } else {
                out.trajectories
                    .push(Trajectory2D::new(w.iter().map(|r| r.point).collect()));
            }
            if end == kept.len() {
                break;
            }
            start += step;
        }
    }
    Ok(out)
}

pub fn ingest_tracks_file(
    path: impl AsRef<Path>,
    fps: f64,
    motion: &MotionConfig,
    k: &CameraIntrinsics,
    overlap: usize,
) -> Result<IngestResult> {
    let f = std::fs::File::open(path)?;
    ingest_tracks(std::io::BufReader::new(f), fps, motion, k, overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    fn csv_track(id: &str, frames: impl Iterator<Item = u64>) -> String {
        frames
            .map(|f| {
                format!(
                    "{id},{f},{},{}\n",
                    100.0 + f as f64 * 0.1,
                    500.0 + f as f64 * 0.01
                )
            })
            .collect()
    }

    #[test]
    fn stride_arithmetic() {
        assert_eq!(frame_stride(60.0, 0.5).unwrap(), 30);
        assert_eq!(frame_stride(25.0, 0.5).unwrap(), 13);
        assert!(frame_stride(1.0, 0.1).is_err());
    }

    #[test]
    fn hundred_points_make_three_full_windows() {
        // 100 resampled points at stride 30.
        let body = csv_track("7", (0..100).map(|i| i * 30));
        let text = format!("track_id,frame,u,v\n{body}");
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0).unwrap();
        let lens: Vec<usize> = r.trajectories.iter().map(Trajectory2D::len).collect();
        assert_eq!(lens, vec![31, 31, 31]);
        assert_eq!(r.frame_stride, 30);
        assert!(r.warning().is_none());
    }

    #[test]
    fn full_rate_track_is_resampled() {
        // Every frame present at 60 fps: 0..=900 gives 31 points at stride 30.
        let body = csv_track("a", 0..=900);
        let text = format!("track_id,frame,u,v\n{body}");
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0).unwrap();
        assert_eq!(r.trajectories.len(), 1);
        let t = &r.trajectories[0];
        assert_eq!(t.len(), 31);
        assert!((t.points[1][0] - t.points[0][0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn trailing_window_kept_when_long_enough() {
        let body = csv_track("1", (0..45).map(|i| i * 30));
        let text = format!("track_id,frame,u,v\n{body}");
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0).unwrap();
        let lens: Vec<usize> = r.trajectories.iter().map(Trajectory2D::len).collect();
        assert_eq!(lens, vec![31, 14]);
    }

    #[test]
    fn gaps_and_out_of_image_windows_are_dropped() {
        let mut frames: Vec<u64> = (0..62).map(|i| i * 30).collect();
        frames.remove(5);
        let body = csv_track("g", frames.into_iter());
        let outside = "o,0,-5,10\n".to_string() + &csv_track("o", (1..31).map(|i| i * 30));
        let text = format!("track_id,frame,u,v\n{body}{outside}");
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0).unwrap();
        assert_eq!(r.tracks, 2);
        assert_eq!(r.trajectories.len(), 1);
        assert_eq!(r.windows_dropped, 2);
    }

    #[test]
    fn overlap_advances_by_the_remaining_length() {
        let body = csv_track("1", (0..51).map(|i| i * 30));
        let text = format!("track_id,frame,u,v\n{body}");
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 10).unwrap();
        let lens: Vec<usize> = r.trajectories.iter().map(Trajectory2D::len).collect();
        assert_eq!(lens, vec![31, 30]);
        assert_eq!(r.trajectories[1].points[0], r.trajectories[0].points[21]);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = "track_id,frame,u,v\n1,0,10,10\n1,30,abc,10\n";
        match ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0) {
            Err(Error::MalformedRow { line: 3, message }) => assert!(message.contains('u')),
            other => panic!("{other:?}"),
        }
        let text = "track_id,frame,u,v\n1,30,10,10\n1,30,11,10\n";
        assert!(matches!(
            ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0),
            Err(Error::MalformedRow { line: 3, .. })
        ));
        let text = "id,frame,u,v\n";
        assert!(matches!(
            ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn empty_output_warns() {
        let text = format!(
            "track_id,frame,u,v\n{}",
            csv_track("s", (0..5).map(|i| i * 30))
        );
        let r = ingest_tracks(text.as_bytes(), 60.0, &MotionConfig::default(), &k(), 0).unwrap();
        assert!(r.trajectories.is_empty());
        assert!(r.warning().is_some());
    }

    proptest! {
        #[test]
        fn outputs_satisfy_trajectory_invariants(
            n in 1usize..120,
            missing in prop::collection::vec(0usize..120, 0..4),
            x0 in -100.0f64..2000.0,
            dx in -30.0f64..30.0,
            overlap in 0usize..20,
        ) {
            let rows: String = (0..n)
                .filter(|i| !missing.contains(i))
                .map(|i| format!("t,{},{},{}\n", i * 30, x0 + dx * i as f64, 540.0))
                .collect();
            let text = format!("track_id,frame,u,v\n{rows}");
            let cfg = MotionConfig::default();
            let r = ingest_tracks(text.as_bytes(), 60.0, &cfg, &k(), overlap).unwrap();
            for t in &r.trajectories {
                prop_assert!(t.validate(&k(), &cfg).is_ok());
            }
        }
    }
}
