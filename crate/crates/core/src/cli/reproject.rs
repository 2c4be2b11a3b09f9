//! Ground-polygon reprojection overlay.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::geometry::{backproject_pixel, project_ground_point, CameraIntrinsics, CameraPose};

/// Parses `u,v;u,v;...` into at least three vertices.
pub fn parse_polygon(s: &str) -> Result<Vec<[f64; 2]>> {
    let pts = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v: Vec<f64> = p
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("vertex {p:?} is not u,v")))?;
            match v[..] {
                [u, v] => Ok([u, v]),
                _ => Err(Error::InvalidArgument(format!("vertex {p:?} is not u,v"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a polygon needs at least 3 vertices, got {}",
            pts.len()
        )));
    }
    Ok(pts)
}

/// Lifts each pixel to the ground with `truth`, then projects it with `predicted`.
pub fn reproject_polygon(
    truth: &CameraPose,
    predicted: &CameraPose,
    k: &CameraIntrinsics,
    polygon: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>> {
    polygon
        .iter()
        .map(|&px| {
            let g = backproject_pixel(truth, k, px)?;
            project_ground_point(predicted, k, g)
        })
        .collect()
}

fn points_attr(pts: &[[f64; 2]]) -> String {
    pts.iter()
        .map(|p| format!("{:.3},{:.3}", p[0], p[1]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Image-sized canvas with the original polygon and its reprojection.
pub fn overlay_svg(
    k: &CameraIntrinsics,
    original: &[[f64; 2]],
    reprojected: &[[f64; 2]],
) -> String {
    let (w, h) = (k.width, k.height);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="20">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="{w}" height="{h}" fill="#f4f4f4" stroke="#444"/>"##
    );
    let _ = writeln!(
        svg,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="#1f77b4" stroke-width="3"/>"##,
        points_attr(original)
    );
    let _ = writeln!(
        svg,
        r##"<polygon points="{}" fill="none" stroke="#d62728" stroke-width="3" stroke-dasharray="12 6"/>"##,
        points_attr(reprojected)
    );
    let _ = writeln!(
        svg,
        r##"<text x="20" y="34" fill="#1f77b4">true pose</text>"##
    );
    let _ = writeln!(
        svg,
        r##"<text x="20" y="62" fill="#d62728">predicted pose</text>"##
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap()
    }

    fn square() -> Vec<[f64; 2]> {
        vec![
            [700.0, 700.0],
            [1200.0, 700.0],
            [1300.0, 1000.0],
            [600.0, 1000.0],
        ]
    }

    #[test]
    fn identical_pose_round_trips() {
        let p = CameraPose::from_euler(4.0, EulerAngles::from_degrees(10.0, -35.0, 3.0)).unwrap();
        let out = reproject_polygon(&p, &p, &k(), &square()).unwrap();
        for (a, b) in square().iter().zip(&out) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn higher_camera_shrinks_toward_principal_point() {
        let down = EulerAngles::from_degrees(0.0, -90.0, 0.0);
        let truth = CameraPose::from_euler(5.0, down).unwrap();
        let pred = CameraPose::from_euler(5.4, down).unwrap();
        let out = reproject_polygon(&truth, &pred, &k(), &square()).unwrap();
        let s = 5.0 / 5.4;
        for (a, b) in square().iter().zip(&out) {
            assert!((b[0] - (960.0 + s * (a[0] - 960.0))).abs() < 1e-9);
            assert!((b[1] - (540.0 + s * (a[1] - 540.0))).abs() < 1e-9);
        }
    }

    #[test]
    fn vertex_above_horizon_fails() {
        let p = CameraPose::from_euler(4.0, EulerAngles::from_degrees(0.0, -10.0, 0.0)).unwrap();
        let poly = vec![[960.0, 100.0], [1000.0, 900.0], [900.0, 900.0]];
        assert!(matches!(
            reproject_polygon(&p, &p, &k(), &poly),
            Err(Error::Horizon { .. })
        ));
    }

    #[test]
    fn polygon_parsing_and_svg() {
        let poly = parse_polygon("1,2; 3,4;5,6").unwrap();
        assert_eq!(poly, vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert!(parse_polygon("1,2;3,4").is_err());
        assert!(parse_polygon("1,2;3;5,6").is_err());
        let svg = overlay_svg(&k(), &poly, &poly);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.contains(r#"width="1920""#));
    }
}
