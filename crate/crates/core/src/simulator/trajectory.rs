use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::region::{visible_ground_region, GroundPolygon};
use super::{MotionConfig, Trajectory2D};
use crate::error::{Error, Result};
use crate::geometry::{project_ground_point, CameraIntrinsics, CameraPose};

/// Straight-line (optionally jittered) constant-speed walker on `z = 0`,
/// rendered through one camera.
#[derive(Debug, Clone)]
pub struct TrajectoryGenerator {
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    cfg: MotionConfig,
    region: GroundPolygon,
}

impl TrajectoryGenerator {
    pub fn new(pose: CameraPose, intrinsics: CameraIntrinsics, cfg: MotionConfig) -> Result<Self> {
        cfg.validate()?;
        let region = visible_ground_region(&pose, &intrinsics, cfg.max_range_m)?;
        Ok(Self {
            pose,
            intrinsics,
            cfg,
            region,
        })
    }

    pub fn region(&self) -> &GroundPolygon {
        &self.region
    }

    /// Walks `max_len - 1` steps each way from a random visible start point,
    /// keeps the in-image run through the start, and cuts a window of random
    /// length from it. Rejected draws are retried up to `max_retries` times.
    pub fn generate<R: Rng + ?Sized>(&self, speed: f64, rng: &mut R) -> Result<Trajectory2D> {
        self.generate_counted(speed, rng).map(|(t, _)| t)
    }

    /// Like [`generate`](Self::generate), also returning how many draws were
    /// rejected before the accepted one.
    pub fn generate_counted<R: Rng + ?Sized>(
        &self,
        speed: f64,
        rng: &mut R,
    ) -> Result<(Trajectory2D, usize)> {
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "walking speed must be non-negative, got {speed}"
            )));
        }
        let step = speed * self.cfg.dt;
        let jitter = if self.cfg.heading_jitter_std > 0.0 {
            Some(Normal::new(0.0, self.cfg.heading_jitter_std).expect("validated jitter std"))
        } else {
            None
        };
        let reach = self.cfg.max_len - 1;

        for attempt in 0..self.cfg.max_retries {
            let start = self.region.sample(rng);
            let heading = rng.random::<f64>() * TAU;
            let forward = walk(start, heading, step, reach, jitter.as_ref(), rng);
            let backward = walk(
                start,
                heading + std::f64::consts::PI,
                step,
                reach,
                jitter.as_ref(),
                rng,
            );

            // Index `reach` is the start point.
            let ground: Vec<[f64; 2]> = backward
                .iter()
                .rev()
                .chain(std::iter::once(&start))
                .chain(forward.iter())
                .copied()
                .collect();
            let pixels: Vec<Option<[f64; 2]>> = ground
                .iter()
                .map(|g| {
                    project_ground_point(&self.pose, &self.intrinsics, *g)
                        .ok()
                        .filter(|p| self.intrinsics.contains(p[0], p[1]))
                })
                .collect();
            if pixels[reach].is_none() {
                continue;
            }
            let mut lo = reach;
            while lo > 0 && pixels[lo - 1].is_some() {
                lo -= 1;
            }
            let mut hi = reach;
            while hi + 1 < pixels.len() && pixels[hi + 1].is_some() {
                hi += 1;
            }
            let available = hi - lo + 1;
            if available < self.cfg.min_len {
                continue;
            }
            let n = rng.random_range(self.cfg.min_len..=available.min(self.cfg.max_len));
            let offset = lo + rng.random_range(0..=available - n);
            let points = pixels[offset..offset + n]
                .iter()
                .map(|p| p.expect("inside the in-image run"))
                .collect();
            return Ok((Trajectory2D::new(points), attempt));
        }
        Err(Error::GenerationFailure {
            pose: format!(
                "pose (height {:.3} m, q {:?})",
                self.pose.height_m,
                self.pose.orientation.to_array()
            ),
            retries: self.cfg.max_retries,
        })
    }
}

fn walk<R: Rng + ?Sized>(
    start: [f64; 2],
    mut heading: f64,
    step: f64,
    count: usize,
    jitter: Option<&Normal<f64>>,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let mut p = start;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if let Some(j) = jitter {
            heading += j.sample(rng);
        }
        p = [p[0] + step * heading.cos(), p[1] + step * heading.sin()];
        out.push(p);
    }
    out
}

pub fn generate_trajectory<R: Rng + ?Sized>(
    pose: &CameraPose,
    speed: f64,
    k: &CameraIntrinsics,
    cfg: &MotionConfig,
    rng: &mut R,
) -> Result<Trajectory2D> {
    TrajectoryGenerator::new(*pose, *k, *cfg)?.generate(speed, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{backproject_pixel, EulerAngles};
    use crate::simulator::stream_rng;

    fn k1000() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    #[test]
    fn top_down_pixel_spacing_is_140() {
        let pose = CameraPose::from_euler(5.0, EulerAngles::from_degrees(0.0, -90.0, 0.0)).unwrap();
        let k = k1000();
        let cfg = MotionConfig::default();
        let mut rng = stream_rng(0, 0, 0, 0);
        let mut produced = 0;
        for _ in 0..50 {
            // The footprint is only 9.6 m wide, so most headings are rejected.
            let Ok(t) = generate_trajectory(&pose, 1.4, &k, &cfg, &mut rng) else {
                continue;
            };
            for w in t.points.windows(2) {
                let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                assert!((d - 140.0).abs() < 1e-9, "{d}");
            }
            produced += 1;
        }
        assert!(produced > 0);
    }

    #[test]
    fn zero_speed_is_degenerate_but_allowed() {
        let pose = CameraPose::from_euler(5.0, EulerAngles::from_degrees(0.0, -35.0, 0.0)).unwrap();
        let t = generate_trajectory(
            &pose,
            0.0,
            &k1000(),
            &MotionConfig::default(),
            &mut stream_rng(1, 0, 0, 0),
        )
        .unwrap();
        assert!(t.is_degenerate());
        assert_eq!(t.len().clamp(11, 31), t.len());
    }

    #[test]
    fn outputs_respect_length_and_image_bounds() {
        let k = k1000();
        let cfg = MotionConfig::default();
        let mut rng = stream_rng(2, 0, 0, 0);
        for i in 0..200 {
            let pose = CameraPose::from_euler(
                2.0 + (i % 7) as f64,
                EulerAngles::from_degrees(
                    10.0,
                    -50.0 + (i % 31) as f64,
                    -15.0 + (i % 11) as f64 * 3.0,
                ),
            )
            .unwrap();
            let t = generate_trajectory(&pose, 1.4, &k, &cfg, &mut rng).unwrap();
            t.validate(&k, &cfg).unwrap();
        }
    }

    #[test]
    fn backprojected_spacing_equals_speed_times_dt() {
        let k = k1000();
        let cfg = MotionConfig::default();
        let mut rng = stream_rng(3, 0, 0, 0);
        let pose =
            CameraPose::from_euler(4.2, EulerAngles::from_degrees(30.0, -28.0, 6.0)).unwrap();
        for _ in 0..100 {
            let speed = rng.random_range(0.5..3.0);
            let t = generate_trajectory(&pose, speed, &k, &cfg, &mut rng).unwrap();
            let g: Vec<[f64; 2]> = t
                .points
                .iter()
                .map(|p| backproject_pixel(&pose, &k, *p).unwrap())
                .collect();
            for w in g.windows(2) {
                let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                assert!((d - speed * cfg.dt).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn jitter_keeps_step_length() {
        let k = k1000();
        let cfg = MotionConfig {
            heading_jitter_std: 0.2,
            ..MotionConfig::default()
        };
        let pose = CameraPose::from_euler(5.0, EulerAngles::from_degrees(0.0, -35.0, 0.0)).unwrap();
        let mut rng = stream_rng(4, 0, 0, 0);
        let t = generate_trajectory(&pose, 1.4, &k, &cfg, &mut rng).unwrap();
        let g: Vec<[f64; 2]> = t
            .points
            .iter()
            .map(|p| backproject_pixel(&pose, &k, *p).unwrap())
            .collect();
        for w in g.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!((d - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn impossible_lengths_fail_after_retries() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let pose = CameraPose::from_euler(2.0, EulerAngles::from_degrees(0.0, -90.0, 0.0)).unwrap();
        let cfg = MotionConfig {
            max_retries: 20,
            ..MotionConfig::default()
        };
        // 2 m x 2 m footprint, 0.5 m steps: 11 points can never fit.
        let err =
            generate_trajectory(&pose, 1.0, &k, &cfg, &mut stream_rng(5, 0, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::GenerationFailure { retries: 20, .. }));
    }
}
