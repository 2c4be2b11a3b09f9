use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{backproject_pixel, CameraIntrinsics, CameraPose};

pub const DEFAULT_MAX_RANGE_M: f64 = 100.0;

/// Rays must point at least this far below the horizon (per unit focal depth).
const HORIZON_MARGIN: f64 = 1e-9;

/// Convex ground polygon, counter-clockwise, in world `(x, y)` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl GroundPolygon {
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Uniform sample over the polygon (fan triangulation from vertex 0).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let v = &self.vertices;
        let areas: Vec<f64> = (1..v.len() - 1)
            .map(|i| triangle_area(v[0], v[i], v[i + 1]))
            .collect();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut tri = areas.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                tri = i;
                break;
            }
            pick -= a;
        }
        let (a, b, c) = (v[0], v[tri + 1], v[tri + 2]);
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        [
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
        ]
    }
}

fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Keeps the part of `poly` where `a*u + b*v + c <= 0` (Sutherland-Hodgman step).
fn clip_half_plane(poly: &[[f64; 2]], [a, b, c]: [f64; 3]) -> Vec<[f64; 2]> {
    let f = |p: [f64; 2]| a * p[0] + b * p[1] + c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (fc, fn_) = (f(cur), f(next));
        if fc <= 0.0 {
            out.push(cur);
        }
        if (fc <= 0.0) != (fn_ <= 0.0) {
            let t = fc / (fc - fn_);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Ground area seen by the camera: the image rectangle backprojected onto
/// `z = 0`, cut below the horizon and at `max_range_m` forward distance.
///
/// Both cuts are linear in pixel coordinates because the world ray is an
/// affine function of `(u, v)`, so the clip happens in the image.
pub fn visible_ground_region(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    max_range_m: f64,
) -> Result<GroundPolygon> {
    // World ray d(u, v) = M [u, v, 1]^T.
    let d0 = pose.pixel_ray(k, 0.0, 0.0);
    let du = pose.pixel_ray(k, 1.0, 0.0);
    let dv = pose.pixel_ray(k, 0.0, 1.0);
    let col = |i: usize| [du[i] - d0[i], dv[i] - d0[i], d0[i]];
    let (mx, my, mz) = (col(0), col(1), col(2));

    // d_z <= -margin
    let below_horizon = [mz[0], mz[1], mz[2] + HORIZON_MARGIN];
    // h * (f . d) + R * d_z <= 0
    let f = pose.forward_ground_dir();
    let h = pose.height_m;
    let r = max_range_m;
    let in_range = [0, 1, 2].map(|i| h * (f[0] * mx[i] + f[1] * my[i]) + r * mz[i]);

    let (w, ht) = (k.width_f(), k.height_f());
    let rect = vec![[0.0, 0.0], [w, 0.0], [w, ht], [0.0, ht]];
    let clipped = clip_half_plane(&clip_half_plane(&rect, below_horizon), in_range);
    if clipped.len() < 3 {
        return Err(Error::NoGroundVisible);
    }

    let mut vertices = clipped
        .iter()
        .map(|p| backproject_pixel(pose, k, *p))
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::NoGroundVisible)?;
    vertices.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if vertices.len() < 3 || signed_area(&vertices).abs() < 1e-12 {
        return Err(Error::NoGroundVisible);
    }
    if signed_area(&vertices) < 0.0 {
        vertices.reverse();
    }
    Ok(GroundPolygon { vertices })
}
