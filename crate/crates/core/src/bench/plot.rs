//! Minimal SVG line charts for scaling studies.

use std::fmt::Write;

use super::ScalingRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Series<'a> {
    label: String,
    points: Vec<(f64, f64)>,
    color: &'a str,
}

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// One log-log panel at vertical offset `top`.
fn panel(svg: &mut String, top: f64, title: &str, series: &[Series]) {
    let (x0, x1) = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x.log10() - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + HEIGHT - MARGIN - (y.log10() - y0) / (y1 - y0) * plot_h;

    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#,
        top + MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0,
        top + MARGIN - 12.0
    );
    for decade in x0 as i32..=x1 as i32 {
        let x = sx(10f64.powi(decade));
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">1e{decade}</text>"#,
            top + HEIGHT - MARGIN + 16.0
        );
    }
    for decade in y0 as i32..=y1 as i32 {
        let y = sy(10f64.powi(decade));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="11">1e{decade}</text>"#,
            MARGIN - 6.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            path.join(" "),
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{}">{}</text>"#,
            MARGIN + 8.0,
            top + MARGIN + 16.0 + 14.0 * k as f64,
            s.color,
            s.label
        );
    }
}

/// Two stacked panels: wall and ideal time against points, and their ratio.
pub fn scaling_svg(rows: &[ScalingRow]) -> String {
    let mut kinds: Vec<_> = rows.iter().map(|r| r.kind).collect();
    kinds.dedup();
    let mut times = Vec::new();
    let mut ratios = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let of_kind: Vec<&ScalingRow> = rows.iter().filter(|r| r.kind == *kind).collect();
        let collect = |f: fn(&ScalingRow) -> f64| {
            of_kind
                .iter()
                .map(|r| (r.points as f64, f(r)))
                .collect::<Vec<_>>()
        };
        times.push(Series {
            label: format!("{kind} wall"),
            points: collect(|r| r.wall_s),
            color,
        });
        times.push(Series {
            label: format!("{kind} ideal"),
            points: collect(|r| r.ideal_s),
            color: "#7f7f7f",
        });
        ratios.push(Series {
            label: format!("{kind}"),
            points: collect(|r| r.ratio),
            color,
        });
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" font-family="sans-serif">"#,
        2.0 * HEIGHT
    );
    panel(&mut svg, 0.0, "time [s] vs points", &times);
    panel(&mut svg, HEIGHT, "wall / ideal vs points", &ratios);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ExperimentKind;

    #[test]
    fn svg_has_one_line_per_series() {
        let rows: Vec<ScalingRow> = [1usize, 10, 100]
            .iter()
            .map(|&n| ScalingRow {
                kind: ExperimentKind::QubitSpectroscopy,
                points: n,
                wall_s: 0.25 + n as f64 * 0.02,
                ideal_s: n as f64 * 0.02,
                ratio: (0.25 + n as f64 * 0.02) / (n as f64 * 0.02),
            })
            .collect();
        let svg = scaling_svg(&rows);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
    }
}
