//! Minimal deterministic SVG plotting for trajectories: a loss curve (log
//! scale) and a gradient-norm curve (log-log, with the fitted decay slope
//! overlaid when a fit is possible). Every plot also writes its underlying
//! points as CSV so figures can be regenerated or diffed.

use crate::diagnostics::{rate_slope_fit, RateMetric, Trajectory};
use crate::error::Result;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    color: String,
    dashed: bool,
}

struct Plot {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
}

/// Renders the standard pair of figures for `named` trajectories into
/// `out_dir` under `stem`: `{stem}-loss.svg` (train and, when logged, test
/// loss on a log axis) and `{stem}-grad-norm.svg` (nuclear gradient norm,
/// log-log). Returns the paths written.
pub fn emit_plots(
    named: &[(String, &Trajectory)],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut loss = Plot {
        title: format!("{stem}: training loss"),
        x_label: "step",
        y_label: "loss",
        log_x: false,
        log_y: true,
        series: Vec::new(),
    };
    let mut grad = Plot {
        title: format!("{stem}: gradient norm"),
        x_label: "step",
        y_label: "nuclear gradient norm",
        log_x: true,
        log_y: true,
        series: Vec::new(),
    };

    for (i, (name, traj)) in named.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()].to_string();
        let records = traj.records();
        loss.series.push(Series {
            label: format!("{name} train"),
            points: records.iter().map(|r| (r.t as f64, r.train_loss)).collect(),
            color: color.clone(),
            dashed: false,
        });
        let test: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| r.test_loss.map(|y| (r.t as f64, y)))
            .collect();
        if !test.is_empty() {
            loss.series.push(Series {
                label: format!("{name} test"),
                points: test,
                color: color.clone(),
                dashed: true,
            });
        }
        grad.series.push(Series {
            label: name.clone(),
            points: records.iter().map(|r| (r.t as f64, r.grad_norm_nuclear)).collect(),
            color,
            dashed: false,
        });
        if let Some(fit) = slope_overlay(traj) {
            grad.series.push(fit);
        }
    }

    for (plot, kind) in [(&loss, "loss"), (&grad, "grad-norm")] {
        let svg_path = out_dir.join(format!("{stem}-{kind}.svg"));
        std::fs::write(&svg_path, render_svg(plot))?;
        let csv_path = out_dir.join(format!("{stem}-{kind}.points.csv"));
        std::fs::write(&csv_path, points_csv(plot))?;
        written.push(svg_path);
        written.push(csv_path);
    }
    Ok(written)
}

/// Fits the averaged-gradient decay slope and returns it as a dashed
/// reference line; skipped silently when the trajectory is too sparse or
/// short for a fit.
fn slope_overlay(traj: &Trajectory) -> Option<Series> {
    let records = traj.records();
    let t_max = records.last()?.t;
    let t_min = (t_max / 100).max(2);
    let fit = rate_slope_fit(traj, RateMetric::AvgNuclearGrad, (t_min, t_max), 10).ok()?;
    let line = |t: f64| (fit.intercept + fit.slope * t.ln()).exp();
    let (a, b) = (t_min as f64, t_max as f64);
    Some(Series {
        label: format!("avg-grad fit slope {:.3}", fit.slope),
        points: vec![(a, line(a)), (b, line(b))],
        color: "#555555".to_string(),
        dashed: true,
    })
}

fn points_csv(plot: &Plot) -> String {
    let mut out = String::from("series,x,y\n");
    for s in &plot.series {
        for &(x, y) in &s.points {
            let _ = writeln!(out, "{},{},{}", s.label, x, y);
        }
    }
    out
}

/// Log-transforms (if requested) and drops points a log axis cannot show.
fn transformed(series: &Series, log_x: bool, log_y: bool) -> Vec<(f64, f64)> {
    series
        .points
        .iter()
        .filter(|(x, y)| {
            x.is_finite() && y.is_finite() && (!log_x || *x > 0.0) && (!log_y || *y > 0.0)
        })
        .map(|&(x, y)| {
            (if log_x { x.log10() } else { x }, if log_y { y.log10() } else { y })
        })
        .collect()
}

fn render_svg(plot: &Plot) -> String {
    let transformed_series: Vec<(usize, Vec<(f64, f64)>)> = plot
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| (i, transformed(s, plot.log_x, plot.log_y)))
        .collect();

    let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_range = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in &transformed_series {
        for &(x, y) in pts {
            x_range = (x_range.0.min(x), x_range.1.max(x));
            y_range = (y_range.0.min(y), y_range.1.max(y));
        }
    }
    let x_range = pad_range(x_range);
    let y_range = pad_range(y_range);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| {
        let px = MARGIN_LEFT + (x - x_range.0) / (x_range.1 - x_range.0) * plot_w;
        let py = MARGIN_TOP + plot_h - (y - y_range.0) / (y_range.1 - y_range.0) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(&plot.title)
    );

    // Axes.
    let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP + plot_h);
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>",
        MARGIN_TOP
    );

    for x in ticks(x_range, plot.log_x) {
        let (px, _) = to_px(x, y_range.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            y0 + 20.0,
            tick_label(x, plot.log_x)
        );
    }
    for y in ticks(y_range, plot.log_y) {
        let (_, py) = to_px(x_range.0, y);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            py + 4.0,
            tick_label(y, plot.log_y)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(plot.x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(plot.y_label)
    );

    // Data.
    for (i, pts) in &transformed_series {
        if pts.is_empty() {
            continue;
        }
        let s = &plot.series[*i];
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        if pts.len() == 1 {
            let (px, py) = to_px(pts[0].0, pts[0].1);
            let _ = writeln!(svg, "<circle cx=\"{px}\" cy=\"{py}\" r=\"2.5\" fill=\"{}\"/>", s.color);
            continue;
        }
        let mut path = String::new();
        for &(x, y) in pts {
            let (px, py) = to_px(x, y);
            let _ = write!(path, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>",
            path.trim_end(),
            s.color
        );
    }

    // Legend, top-right inside the plot area.
    for (row, s) in plot.series.iter().enumerate() {
        let ly = MARGIN_TOP + 14.0 + 16.0 * row as f64;
        let lx = MARGIN_LEFT + plot_w - 150.0;
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            svg,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" \
             stroke-width=\"1.5\"{dash}/>",
            lx + 20.0,
            s.color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Widens a degenerate or empty range so the mapping to pixels is finite.
fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Tick positions in transformed coordinates: whole decades on log axes when
/// at least two fit, else five evenly spaced values.
fn ticks((lo, hi): (f64, f64), log: bool) -> Vec<f64> {
    if log {
        let decades: Vec<f64> = (lo.ceil() as i64..=hi.floor() as i64).map(|k| k as f64).collect();
        if decades.len() >= 2 {
            return decades;
        }
    }
    (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        if v == v.round() {
            return format!("1e{}", v as i64);
        }
        return format!("1e{v:.1}");
    }
    let s = format!("{v:.4}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() { "0".to_string() } else { trimmed.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
