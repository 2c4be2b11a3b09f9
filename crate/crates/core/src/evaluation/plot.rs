//! Minimal deterministic SVG line plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const PANEL_GAP: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One set of axes; series within a panel share the y scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders stacked panels sharing one x axis. Non-finite points are skipped.
pub fn line_plot_svg(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let n = panels.len().max(1) as f64;
    let height = MARGIN_TOP + n * PANEL_HEIGHT + (n - 1.0) * PANEL_GAP + 50.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let (x0, x1) = range(
        panels
            .iter()
            .flat_map(|p| &p.series)
            .flat_map(|s| s.points.iter().map(|p| p.0)),
    );

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let mut color = 0;
    for (pi, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + pi as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let bottom = top + PANEL_HEIGHT;
        let (y0, y1) = range(
            panel
                .series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.1)),
        );
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * PANEL_HEIGHT;

        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN_LEFT:.1}" y="{top:.1}" width="{plot_w:.1}" height="{PANEL_HEIGHT:.1}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y0 + f * (y1 - y0);
            let xv = x0 + f * (x1 - x0);
            let _ = writeln!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"##,
                MARGIN_LEFT - 6.0,
                sy(yv) + 4.0
            );
            let _ = writeln!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"##,
                sx(xv),
                bottom + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0,
            escape(&panel.y_label)
        );

        for (si, s) in panel.series.iter().enumerate() {
            let c = COLORS[color % COLORS.len()];
            color += 1;
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            if s.points.len() <= 50 {
                for p in &pts {
                    let (cx, cy) = p.split_once(',').expect("formatted pair");
                    let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{c}"/>"#);
                }
            }
            let ly = top + 16.0 + si as f64 * 18.0;
            let lx = WIDTH - MARGIN_RIGHT + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 12.0,
        escape(x_label)
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> Panel {
        Panel {
            y_label: "error <m>".into(),
            series: vec![Series {
                name: "a & b".into(),
                points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, f64::NAN), (3.0, 2.0)],
            }],
        }
    }

    #[test]
    fn renders_escaped_and_deterministic() {
        let a = line_plot_svg("t", "x", &[panel(), panel()]);
        assert_eq!(a, line_plot_svg("t", "x", &[panel(), panel()]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &amp; b") && a.contains("error &lt;m&gt;"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert_eq!(a.matches("<circle").count(), 6);
    }

    #[test]
    fn flat_and_empty_series_do_not_divide_by_zero() {
        let flat = Panel {
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(1.0, 3.0)],
            }],
        };
        let svg = line_plot_svg(
            "t",
            "x",
            &[
                flat,
                Panel {
                    y_label: "e".into(),
                    series: vec![],
                },
            ],
        );
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
