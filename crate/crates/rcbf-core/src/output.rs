//! Trajectory CSV files and self-contained SVG line plots.
//!
//! CSV layout: `t, x_1..x_n, xhat_1..xhat_n, u_1..u_m, d_1..d_m, h, slack`
//! with a header row. Floats are written in shortest round-trip form, so a
//! re-parsed file reproduces the recorded values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{Outcome, Trajectory};
use crate::system::{Input, State};

pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=n).map(|i| format!("xhat_{i}")));
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.extend((1..=m).map(|i| format!("d_{i}")));
    cols.push("h".into());
    cols.push("slack".into());
    cols.join(",")
}

pub fn write_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let n = traj.state_dim();
    let m = traj.input_dim();
    let mut out = String::new();
    out.push_str(&csv_header(n, m));
    out.push('\n');
    for i in 0..traj.len() {
        let mut row = vec![traj.times[i].to_string()];
        row.extend(traj.states[i].iter().map(|v| v.to_string()));
        row.extend(traj.estimates[i].iter().map(|v| v.to_string()));
        row.extend(traj.inputs[i].iter().map(|v| v.to_string()));
        row.extend(traj.disturbances[i].iter().map(|v| v.to_string()));
        row.push(traj.h_values[i].to_string());
        row.push(traj.slacks[i].to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a file produced by [`write_csv`]. The outcome is not stored in the
/// file and comes back as `Completed`.
pub fn read_csv(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty csv", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("x_")).count();
    let m = cols.iter().filter(|c| c.starts_with("u_")).count();
    if cols.len() != 1 + 2 * n + 2 * m + 2 {
        return Err(Error::Config(format!(
            "{}: header has {} columns, expected {}",
            path.display(),
            cols.len(),
            1 + 2 * n + 2 * m + 2
        )));
    }
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        estimates: Vec::new(),
        inputs: Vec::new(),
        disturbances: Vec::new(),
        h_values: Vec::new(),
        slacks: Vec::new(),
        outcome: Outcome::Completed,
    };
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse::<f64>().map_err(|e| {
                    Error::Config(format!(
                        "{} line {}: bad float '{s}': {e}",
                        path.display(),
                        lineno + 2
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != cols.len() {
            return Err(Error::Config(format!(
                "{} line {}: {} fields, expected {}",
                path.display(),
                lineno + 2,
                vals.len(),
                cols.len()
            )));
        }
        let mut it = vals.into_iter();
        traj.times.push(it.next().unwrap());
        traj.states.push(State::from_iterator(n, it.by_ref().take(n)));
        traj.estimates.push(State::from_iterator(n, it.by_ref().take(n)));
        traj.inputs.push(Input::from_iterator(m, it.by_ref().take(m)));
        traj.disturbances.push(Input::from_iterator(m, it.by_ref().take(m)));
        traj.h_values.push(it.next().unwrap());
        traj.slacks.push(it.next().unwrap());
    }
    Ok(traj)
}

/// One labeled line in an SVG plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * span {
        ticks.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Render a self-contained SVG line plot with axes, legend, and the y = 0
/// level marked (the safe-set boundary when plotting h).
pub fn emit_svg_plot(
    series: &[Series],
    title: &str,
    x_label: &str,
    y_label: &str,
    path: &Path,
) -> Result<()> {
    const W: f64 = 860.0;
    const H: f64 = 520.0;
    const ML: f64 = 72.0;
    const MR: f64 = 24.0;
    const MT: f64 = 44.0;
    const MB: f64 = 56.0;

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin < 1e-12 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymax = ymin + 1.0;
    }
    let ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        xml_escape(title)
    );

    for t in nice_ticks(xmin, xmax, 8) {
        let x = px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            py(ymin),
            py(ymax)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            H - MB + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(ymin, ymax, 6) {
        let y = py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            W - MR
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            ML - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }

    // mark the zero level when it is in range
    if ymin < 0.0 && ymax > 0.0 {
        let y0 = py(0.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y0:.2}\" x2=\"{}\" y2=\"{y0:.2}\" stroke=\"#333333\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>",
            W - MR
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">{} = 0</text>",
            W - MR - 44.0,
            y0 - 6.0,
            xml_escape(y_label)
        );
    }

    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1.5\"/>",
        py(ymin),
        py(ymax)
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\" stroke-width=\"1.5\"/>",
        py(ymin),
        W - MR
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        (ML + W - MR) / 2.0,
        H - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        xml_escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y.clamp(ymin, ymax))))
            .collect();
        if pts.len() >= 2 {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
                pts.join(" ")
            );
        }
        let ly = MT + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>",
            ML + 10.0,
            ML + 34.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            ML + 40.0,
            ly + 4.0,
            xml_escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
