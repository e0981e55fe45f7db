//! Deterministic standalone SVG line charts. Output is a pure function of
//! the input series — no timestamps, no randomness — so charts can be
//! golden-file tested and compared byte-for-byte across runs.

use std::fmt::Write as _;

use crate::error::{CliError, Result};

/// How a series is drawn: a connected polyline (analytic curves) or
/// detached circular markers (empirical points).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub kind: SeriesKind,
    /// Palette slot; series sharing a color (analytic line plus empirical
    /// markers of one method) pass the same index.
    pub color_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ChartStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 64.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Tick positions with a 1/2/5 step covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let (lo, hi) = if (hi - lo).abs() < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let raw_step = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw_step.abs().log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| raw_step <= s)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil();
    let mut ticks = Vec::new();
    let mut k = first;
    while k * step <= hi + 1e-9 * step {
        ticks.push(k * step);
        k += 1.0;
    }
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    (ticks, decimals)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the series as a standalone SVG 1.1 document with a fixed
/// 800x600 view box, linear axes with automatic ticks and a legend.
pub fn emit_svg(series: &[Series], style: &ChartStyle) -> Result<String> {
    if series.is_empty() {
        return Err(CliError::EmptySeries);
    }
    for s in series {
        if s.x.is_empty() || s.y.is_empty() {
            return Err(CliError::EmptySeries);
        }
        if s.x.len() != s.y.len() {
            return Err(CliError::SeriesLengthMismatch(s.name.clone()));
        }
        if s.x.iter().chain(s.y.iter()).any(|v| !v.is_finite()) {
            return Err(CliError::NonFiniteSeries(s.name.clone()));
        }
    }

    let fold = |init: (f64, f64), values: &[f64]| {
        values
            .iter()
            .fold(init, |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        (x_lo, x_hi) = fold((x_lo, x_hi), &s.x);
        (y_lo, y_hi) = fold((y_lo, y_hi), &s.y);
    }
    if (x_hi - x_lo).abs() < 1e-300 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if (y_hi - y_lo).abs() < 1e-300 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    // Breathing room so markers at the extremes stay inside the frame.
    let x_pad = 0.02 * (x_hi - x_lo);
    let y_pad = 0.05 * (y_hi - y_lo);
    let (x_lo, x_hi) = (x_lo - x_pad, x_hi + x_pad);
    let (y_lo, y_hi) = (y_lo - y_pad, y_hi + y_pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n",
    );
    out.push_str("<style>\n");
    out.push_str(
        "text { font-family: Helvetica, Arial, sans-serif; font-size: 12px; fill: #222222; }\n.title { font-size: 15px; }\n.axis { stroke: #222222; stroke-width: 1; }\n.grid { stroke: #dddddd; stroke-width: 0.5; }\n",
    );
    let mut used: Vec<usize> = series.iter().map(|s| s.color_index % PALETTE.len()).collect();
    used.sort_unstable();
    used.dedup();
    for idx in &used {
        let _ = writeln!(
            out,
            ".series-{idx} {{ stroke: {color}; stroke-width: 1.8; fill: none; }}\n.marker-{idx} {{ fill: {color}; stroke: none; }}",
            color = PALETTE[*idx]
        );
    }
    out.push_str("</style>\n");
    out.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"#ffffff\"/>\n");
    if !style.title.is_empty() {
        let _ = writeln!(
            out,
            "<text class=\"title\" x=\"{:.2}\" y=\"24\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            escape(&style.title)
        );
    }

    // Grid and ticks.
    let (x_ticks, x_dec) = nice_ticks(x_lo, x_hi);
    let (y_ticks, y_dec) = nice_ticks(y_lo, y_hi);
    for t in &x_ticks {
        let x = px(*t);
        let _ = writeln!(
            out,
            "<line class=\"grid\" x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.*}</text>",
            MARGIN_TOP + plot_h + 18.0,
            x_dec,
            t
        );
    }
    for t in &y_ticks {
        let y = py(*t);
        let _ = writeln!(
            out,
            "<line class=\"grid\" x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.*}</text>",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            y_dec,
            t
        );
    }
    // Axes.
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
        MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT,
        MARGIN_TOP + plot_h
    );
    if !style.x_label.is_empty() {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 20.0,
            escape(&style.x_label)
        );
    }
    if !style.y_label.is_empty() {
        let _ = writeln!(
            out,
            "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">{}</text>",
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&style.y_label)
        );
    }

    // Data.
    for s in series {
        let idx = s.color_index % PALETTE.len();
        match s.kind {
            SeriesKind::Line => {
                let points: Vec<String> = s
                    .x
                    .iter()
                    .zip(&s.y)
                    .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                    .collect();
                let _ = writeln!(
                    out,
                    "<polyline class=\"series-{idx}\" points=\"{}\"/>",
                    points.join(" ")
                );
            }
            SeriesKind::Markers => {
                for (x, y) in s.x.iter().zip(&s.y) {
                    let _ = writeln!(
                        out,
                        "<circle class=\"marker-{idx}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\"/>",
                        px(*x),
                        py(*y)
                    );
                }
            }
        }
    }

    // Legend.
    let legend_x = MARGIN_LEFT + plot_w + 16.0;
    for (row, s) in series.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + row as f64 * 20.0;
        let idx = s.color_index % PALETTE.len();
        match s.kind {
            SeriesKind::Line => {
                let _ = writeln!(
                    out,
                    "<line class=\"series-{idx}\" x1=\"{legend_x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
                    legend_x + 22.0
                );
            }
            SeriesKind::Markers => {
                let _ = writeln!(
                    out,
                    "<circle class=\"marker-{idx}\" cx=\"{:.2}\" cy=\"{y:.2}\" r=\"3.5\"/>",
                    legend_x + 11.0
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            legend_x + 28.0,
            y + 4.0,
            escape(&s.name)
        );
    }

    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_series_produces_one_polyline() {
        let series = [Series {
            name: "unit".into(),
            x: vec![0.0, 1.0],
            y: vec![0.0, 1.0],
            kind: SeriesKind::Line,
            color_index: 0,
        }];
        let svg = emit_svg(&series, &ChartStyle::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("viewBox=\"0 0 800 600\""));
        assert!(svg.starts_with("<?xml"));
    }

    #[test]
    fn identical_series_get_distinct_stroke_classes() {
        let mk = |i| Series {
            name: format!("s{i}"),
            x: vec![0.0, 1.0, 2.0],
            y: vec![1.0, 4.0, 9.0],
            kind: SeriesKind::Line,
            color_index: i,
        };
        let svg = emit_svg(&[mk(0), mk(1)], &ChartStyle::default()).unwrap();
        assert!(svg.contains("class=\"series-0\""));
        assert!(svg.contains("class=\"series-1\""));
    }

    #[test]
    fn output_is_deterministic() {
        let series = [
            Series {
                name: "line".into(),
                x: vec![1.0, 2.0, 3.0],
                y: vec![0.1, 0.2, 0.15],
                kind: SeriesKind::Line,
                color_index: 2,
            },
            Series {
                name: "dots".into(),
                x: vec![1.0, 2.0, 3.0],
                y: vec![0.11, 0.19, 0.16],
                kind: SeriesKind::Markers,
                color_index: 2,
            },
        ];
        let style = ChartStyle {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
        };
        let a = emit_svg(&series, &style).unwrap();
        let b = emit_svg(&series, &style).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            emit_svg(&[], &ChartStyle::default()),
            Err(CliError::EmptySeries)
        ));
        let empty_points = [Series {
            name: "e".into(),
            x: vec![],
            y: vec![],
            kind: SeriesKind::Line,
            color_index: 0,
        }];
        assert!(matches!(
            emit_svg(&empty_points, &ChartStyle::default()),
            Err(CliError::EmptySeries)
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let series = [Series {
            name: "bad".into(),
            x: vec![0.0, 1.0],
            y: vec![0.0, f64::NAN],
            kind: SeriesKind::Line,
            color_index: 0,
        }];
        assert!(matches!(
            emit_svg(&series, &ChartStyle::default()),
            Err(CliError::NonFiniteSeries(_))
        ));
    }
}
