//! Cumulative-regret charts: across-seed mean with a +-1 standard-error band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{mean, standard_error};
use crate::trace::{parse_trace_name, read_trace};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl Curve {
    /// Column-wise mean and standard error of per-seed cumulative regret
    /// series; step `t` averages over the series that reach it.
    pub fn from_series(name: &str, series: &[Vec<f64>]) -> Self {
        let len = series.iter().map(Vec::len).max().unwrap_or(0);
        let mut m = Vec::with_capacity(len);
        let mut s = Vec::with_capacity(len);
        for t in 0..len {
            let col: Vec<f64> = series.iter().filter_map(|v| v.get(t).copied()).collect();
            m.push(mean(&col));
            s.push(standard_error(&col));
        }
        Self { name: name.into(), mean: m, se: s }
    }
}

/// Cumulative-regret series of every trace file in `dir`, grouped by policy.
pub fn load_trace_dir(dir: &Path) -> Result<BTreeMap<String, Vec<(u64, Vec<f64>)>>> {
    let mut out: BTreeMap<String, Vec<(u64, Vec<f64>)>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((policy, seed)) = parse_trace_name(&name) {
            let rows = read_trace(&entry.path())?;
            out.entry(policy).or_default().push((seed, rows.iter().map(|r| r.cumulative_regret).collect()));
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|(seed, _)| *seed);
    }
    Ok(out)
}

pub fn curves_from_dir(dir: &Path) -> Result<Vec<Curve>> {
    Ok(load_trace_dir(dir)?
        .iter()
        .map(|(name, runs)| {
            let series: Vec<Vec<f64>> = runs.iter().map(|(_, s)| s.clone()).collect();
            Curve::from_series(name, &series)
        })
        .collect())
}

/// `t,<name>_mean,<name>_se,...`; `t` counts steps from 1.
pub fn curves_csv(curves: &[Curve]) -> String {
    let mut s = String::from("t");
    for c in curves {
        let _ = write!(s, ",{0}_mean,{0}_se", c.name);
    }
    s.push('\n');
    let len = curves.iter().map(|c| c.mean.len()).max().unwrap_or(0);
    for t in 0..len {
        let _ = write!(s, "{}", t + 1);
        for c in curves {
            match (c.mean.get(t), c.se.get(t)) {
                (Some(m), Some(e)) => {
                    let _ = write!(s, ",{m},{e}");
                }
                _ => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

/// Standalone SVG line chart; identical inputs give identical bytes.
pub fn render_svg(curves: &[Curve], title: &str, y_label: &str) -> String {
    let len = curves.iter().map(|c| c.mean.len()).max().unwrap_or(0);
    let x_max = len.max(1) as f64;
    let mut y_min: f64 = 0.0;
    let mut y_max: f64 = 0.0;
    for c in curves {
        for (m, e) in c.mean.iter().zip(&c.se) {
            if m.is_finite() && e.is_finite() {
                y_min = y_min.min(m - e);
                y_max = y_max.max(m + e);
            }
        }
    }
    if y_max - y_min <= 0.0 {
        y_max = y_min + 1.0;
    }
    let y_step = nice_step(y_max - y_min);
    y_min = (y_min / y_step).floor() * y_step;
    y_max = (y_max / y_step).ceil() * y_step;
    let x_step = nice_step(x_max);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + t / x_max * pw;
    let sy = |v: f64| TOP + (y_max - v) / (y_max - y_min) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    // grid and ticks
    let mut v = y_min;
    while v <= y_max + y_step * 1e-9 {
        let y = sy(v);
        let _ =
            writeln!(s, r##"<line x1="{LEFT:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            tick_label(v, y_step)
        );
        v += y_step;
    }
    let mut t = 0.0;
    while t <= x_max + x_step * 1e-9 {
        let x = sx(t);
        let _ =
            writeln!(s, r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="#e0e0e0"/>"##, TOP, TOP + ph);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            tick_label(t, x_step)
        );
        t += x_step;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.1}" y="{TOP:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">t</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let n = c.mean.len();
        if n > 0 {
            let mut band = String::new();
            for k in 0..n {
                let _ = write!(band, "{:.2},{:.2} ", sx((k + 1) as f64), sy(c.mean[k] + c.se[k]));
            }
            for k in (0..n).rev() {
                let _ = write!(band, "{:.2},{:.2} ", sx((k + 1) as f64), sy(c.mean[k] - c.se[k]));
            }
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                band.trim_end()
            );
            let mut line = String::new();
            for k in 0..n {
                let _ = write!(line, "{:.2},{:.2} ", sx((k + 1) as f64), sy(c.mean[k]));
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                line.trim_end()
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"#,
            lx + 18.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&c.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `regret.svg` and `regret.csv` for the traces in `dir` into `out`.
pub fn chart_trace_dir(dir: &Path, out: &Path, title: &str) -> Result<Vec<PathBuf>> {
    let curves = curves_from_dir(dir)?;
    write_charts(&curves, out, title)
}

pub fn write_charts(curves: &[Curve], out: &Path, title: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let svg = out.join("regret.svg");
    let csv = out.join("regret.csv");
    std::fs::write(&svg, render_svg(curves, title, "cumulative regret")).map_err(io_err(&svg))?;
    std::fs::write(&csv, curves_csv(curves)).map_err(io_err(&csv))?;
    Ok(vec![svg, csv])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_is_valid() {
        let svg = render_svg(&[], "nothing", "regret");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("polyline") && !svg.contains("NaN"));
        assert_eq!(curves_csv(&[]), "t\n");
    }

    #[test]
    fn single_seed_has_zero_band() {
        let c = Curve::from_series("a", &[vec![0.0, 1.0, 1.5]]);
        assert_eq!(c.mean, vec![0.0, 1.0, 1.5]);
        assert_eq!(c.se, vec![0.0; 3]);
    }

    #[test]
    fn deterministic_and_escaped() {
        let c =
            vec![Curve::from_series("x<y", &[vec![0.0, 1.0], vec![1.0, 3.0]]), Curve::from_series("b", &[vec![0.5]])];
        let a = render_svg(&c, "t & u", "r");
        assert_eq!(a, render_svg(&c, "t & u", "r"));
        assert!(a.contains("x&lt;y") && a.contains("t &amp; u"));
        assert_eq!(c[0].mean, vec![0.5, 2.0]);
        assert_eq!(c[0].se, vec![0.5, 1.0]);
        let csv = curves_csv(&c);
        assert_eq!(csv.lines().nth(2).unwrap(), "2,2,1,,");
    }
}
