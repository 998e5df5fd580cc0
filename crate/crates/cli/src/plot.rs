//! Static SVG bifurcation diagrams: amplitude against the parameter.
//!
//! Output is deterministic for fixed input: fixed-precision coordinates,
//! no timestamps, no randomness.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy)]
pub struct PlotPoint {
    pub lambda: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OraclePlotPoint {
    pub lambda: f64,
    pub amplitude: f64,
    pub stable: bool,
}

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 56.0;

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn from_values(values: impl Iterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() || !max.is_finite() {
            return Self { min: 0.0, max: 1.0 };
        }
        if (max - min).abs() < 1e-12 {
            return Self {
                min: min - 0.5,
                max: max + 0.5,
            };
        }
        let pad = 0.05 * (max - min);
        Self {
            min: min - pad,
            max: max + pad,
        }
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / count as f64)
            .collect()
    }
}

fn x_pixel(axis: &Axis, v: f64) -> f64 {
    MARGIN_LEFT + (v - axis.min) / (axis.max - axis.min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_pixel(axis: &Axis, v: f64) -> f64 {
    HEIGHT - MARGIN_BOTTOM
        - (v - axis.min) / (axis.max - axis.min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() < 1e-3 || v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

/// Render branches (markers) and an optional oracle curve (stable solid,
/// unstable dashed) into one SVG document.
pub fn render_svg(
    branches: &[(String, Vec<PlotPoint>)],
    oracle: Option<&[OraclePlotPoint]>,
    title: &str,
) -> String {
    let all_lambda = branches
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.lambda))
        .chain(oracle.into_iter().flatten().map(|p| p.lambda));
    let all_amp = branches
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.amplitude))
        .chain(oracle.into_iter().flatten().map(|p| p.amplitude));
    let x_axis = Axis::from_values(all_lambda);
    let y_axis = Axis::from_values(all_amp);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    );

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>"
    );
    for tick in x_axis.ticks(6) {
        let px = x_pixel(&x_axis, tick);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            y0 + 20.0,
            fmt_tick(tick)
        );
    }
    for tick in y_axis.ticks(5) {
        let py = y_pixel(&y_axis, tick);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            py + 4.0,
            fmt_tick(tick)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">parameter</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">amplitude</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // Oracle curve split into stable/unstable runs.
    if let Some(points) = oracle {
        let mut segment: Vec<&OraclePlotPoint> = Vec::new();
        let flush = |segment: &mut Vec<&OraclePlotPoint>, svg: &mut String| {
            if segment.len() >= 2 {
                let stable = segment[0].stable;
                let style = if stable {
                    "stroke=\"#1f9d55\" stroke-width=\"2\""
                } else {
                    "stroke=\"#7c3aed\" stroke-width=\"2\" stroke-dasharray=\"6 4\""
                };
                let mut path = String::new();
                for (i, p) in segment.iter().enumerate() {
                    let cmd = if i == 0 { 'M' } else { 'L' };
                    let _ = write!(
                        path,
                        "{cmd}{:.1} {:.1} ",
                        x_pixel(&x_axis, p.lambda),
                        y_pixel(&y_axis, p.amplitude)
                    );
                }
                let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" {style}/>", path.trim_end());
            }
            segment.clear();
        };
        for point in points {
            if let Some(last) = segment.last() {
                if last.stable != point.stable {
                    let boundary = point;
                    segment.push(boundary);
                    flush(&mut segment, &mut svg);
                }
            }
            segment.push(point);
        }
        flush(&mut segment, &mut svg);
    }

    // CBC branches as markers.
    let colors = ["black", "#d62728", "#1f77b4", "#ff7f0e"];
    for (b, (name, points)) in branches.iter().enumerate() {
        let color = colors[b % colors.len()];
        for p in points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                x_pixel(&x_axis, p.lambda),
                y_pixel(&y_axis, p.amplitude)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            x1 - 150.0,
            y1 + 16.0 + 14.0 * b as f64
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Parse a branch CSV into plot points, reporting the offending row on
/// schema violations.
pub fn branch_points_from_csv(text: &str) -> Result<Vec<PlotPoint>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header != crate::output::BRANCH_CSV_HEADER {
        return Err(format!("unexpected branch CSV header `{header}`"));
    }
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("row {}: expected 9 fields, got {}", row + 2, fields.len()));
        }
        let lambda: f64 = fields[1]
            .parse()
            .map_err(|_| format!("row {}: bad lambda `{}`", row + 2, fields[1]))?;
        let amplitude: f64 = fields[2]
            .parse()
            .map_err(|_| format!("row {}: bad amplitude `{}`", row + 2, fields[2]))?;
        points.push(PlotPoint { lambda, amplitude });
    }
    Ok(points)
}

/// Parse an oracle CSV into plot points.
pub fn oracle_points_from_csv(text: &str) -> Result<Vec<OraclePlotPoint>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header != crate::output::ORACLE_CSV_HEADER {
        return Err(format!("unexpected oracle CSV header `{header}`"));
    }
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(format!("row {}: expected 7 fields, got {}", row + 2, fields.len()));
        }
        let lambda: f64 = fields[0]
            .parse()
            .map_err(|_| format!("row {}: bad lambda `{}`", row + 2, fields[0]))?;
        let amplitude: f64 = fields[4]
            .parse()
            .map_err(|_| format!("row {}: bad amplitude `{}`", row + 2, fields[4]))?;
        let stable = match fields[6] {
            "stable" => true,
            "unstable" => false,
            other => return Err(format!("row {}: bad stability `{other}`", row + 2)),
        };
        points.push(OraclePlotPoint {
            lambda,
            amplitude,
            stable,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_plot_has_axes_only() {
        let svg = render_svg(&[], None, "empty");
        assert!(svg.contains("<line"));
        assert!(!svg.contains("<circle"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn deterministic_bytes() {
        let branch = vec![(
            "forward".to_string(),
            vec![
                PlotPoint { lambda: 0.75, amplitude: 0.33 },
                PlotPoint { lambda: 0.82, amplitude: 0.31 },
            ],
        )];
        let oracle = vec![
            OraclePlotPoint { lambda: 0.7, amplitude: 0.35, stable: true },
            OraclePlotPoint { lambda: 0.8, amplitude: 0.32, stable: true },
            OraclePlotPoint { lambda: 0.9, amplitude: 0.30, stable: false },
            OraclePlotPoint { lambda: 0.95, amplitude: 0.28, stable: false },
        ];
        let a = render_svg(&branch, Some(&oracle), "overlay");
        let b = render_svg(&branch, Some(&oracle), "overlay");
        assert_eq!(a, b);
        assert!(a.contains("stroke-dasharray"));
        assert!(a.contains("<circle"));
    }

    #[test]
    fn malformed_row_is_reported_with_number() {
        let csv = format!("{}\n0,0.75,bad,0,0,0,0,,0\n", crate::output::BRANCH_CSV_HEADER);
        let err = branch_points_from_csv(&csv).unwrap_err();
        assert!(err.contains("row 2"), "{err}");
    }
}
