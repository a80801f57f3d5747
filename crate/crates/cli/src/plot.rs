//! Static SVG rendering of step curves, shaded bands and a reference curve.

use anyhow::{anyhow, bail, Context, Result};
use std::fmt::Write as _;
use std::path::Path;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub enum Series {
    Curve { label: String, levels: Vec<f64>, values: Vec<f64> },
    Band { label: String, levels: Vec<f64>, center: Vec<f64>, lower: Vec<f64>, upper: Vec<f64> },
}

impl Series {
    fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (levels, cols): (&[f64], Vec<&[f64]>) = match self {
            Series::Curve { levels, values, .. } => (levels, vec![values]),
            Series::Band { levels, center, lower, upper, .. } => (levels, vec![center, lower, upper]),
        };
        cols.into_iter().flat_map(move |c| levels.iter().copied().zip(c.iter().copied()))
    }
}

/// Reads a curve CSV: a band if it has `lower` and `upper` columns,
/// otherwise the first column against `column` (or the second column).
pub fn read_series(path: &Path, column: Option<&str>) -> Result<Series> {
    let source = path.display().to_string();
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {source}"))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let band = match (find("lower"), find("upper")) {
        (Some(lo), Some(up)) => Some((find("center").unwrap_or(1), lo, up)),
        _ => None,
    };
    let value = match column {
        Some(c) => find(c).ok_or_else(|| anyhow!("{source}:1: missing column '{c}'"))?,
        None if headers.len() >= 2 => 1,
        None => bail!("{source}:1: need at least two columns"),
    };
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        for (k, col) in cols.iter_mut().enumerate() {
            let s = rec.get(k).unwrap_or("").trim();
            let v = s
                .parse::<f64>()
                .map_err(|_| anyhow!("parse error at {source}:{line} field {}: not a number: '{s}'", k + 1))?;
            col.push(v);
        }
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let levels = cols[0].clone();
    Ok(match band {
        Some((c, lo, up)) if column.is_none() => Series::Band {
            label,
            levels,
            center: cols[c].clone(),
            lower: cols[lo].clone(),
            upper: cols[up].clone(),
        },
        _ => Series::Curve { label, levels, values: cols[value].clone() },
    })
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub width: f64,
    pub height: f64,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((a, b)) => Some((a.min(v), b.max(v))),
    })
}

fn padded(r: Option<(f64, f64)>) -> (f64, f64) {
    match r {
        None => (0.0, 1.0),
        Some((a, b)) if a == b => (a - 0.5, b + 0.5),
        Some((a, b)) => (a, b),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Step path through (level, value) pairs, holding each value until the
/// next level.
fn step_path(levels: &[f64], values: &[f64], sx: &impl Fn(f64) -> f64, sy: &impl Fn(f64) -> f64) -> String {
    let mut d = String::new();
    for (i, (&x, &y)) in levels.iter().zip(values).enumerate() {
        if i == 0 {
            let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
        } else {
            let _ = write!(d, " H{:.2} V{:.2}", sx(x), sy(y));
        }
    }
    d
}

pub fn render(series: &[Series], reference: Option<&Series>, spec: &PlotSpec) -> String {
    let all = || series.iter().chain(reference).flat_map(|s| s.points());
    let (x0, x1) = padded(range(all().map(|p| p.0)));
    let (y0, y1) = padded(range(all().map(|p| p.1)));
    let (left, right, top, bottom) = (64.0, 16.0, 36.0, 48.0);
    let (w, h) = (spec.width, spec.height);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&spec.title));

    // Axes with ticks.
    let _ = writeln!(s, r#"<g stroke="black" fill="none"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></g>"#);
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(&spec.xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&spec.ylabel)
    );

    // Shaded bands first so curves stay visible on top.
    for (i, series) in series.iter().enumerate() {
        if let Series::Band { levels, lower, upper, .. } = series {
            if levels.is_empty() {
                continue;
            }
            let color = PALETTE[i % PALETTE.len()];
            let mut d = step_path(levels, upper, &sx, &sy);
            for j in (0..levels.len()).rev() {
                let x = if j + 1 < levels.len() { levels[j + 1] } else { levels[j] };
                let _ = write!(d, " L{:.2},{:.2} H{:.2}", sx(x), sy(lower[j]), sx(levels[j]));
            }
            d.push_str(" Z");
            let _ = writeln!(s, r#"<path d="{d}" fill="{color}" fill-opacity="0.25" stroke="none"/>"#);
        }
    }
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let (levels, values) = match series {
            Series::Curve { levels, values, .. } => (levels, values),
            Series::Band { levels, center, .. } => (levels, center),
        };
        if levels.is_empty() {
            continue;
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, step_path(levels, values, &sx, &sy));
    }
    if let Some(Series::Curve { levels, values, .. }) = reference {
        if !levels.is_empty() {
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                step_path(levels, values, &sx, &sy)
            );
        }
    }

    // Legend.
    let entries: Vec<(String, &str, bool)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = match s {
                Series::Curve { label, .. } | Series::Band { label, .. } => label.clone(),
            };
            (label, PALETTE[i % PALETTE.len()], false)
        })
        .chain(reference.map(|r| match r {
            Series::Curve { label, .. } | Series::Band { label, .. } => (label.clone(), "black", true),
        }))
        .collect();
    for (k, (label, color, dashed)) in entries.iter().enumerate() {
        let y = top + 14.0 + 16.0 * k as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"{dash}/>"#, left + 10.0, left + 34.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, left + 40.0, y + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    let r = (t * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}
