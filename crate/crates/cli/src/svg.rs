//! Self-contained SVG plots: cluster scatter, model samples over data, and
//! the loss-weight heat map. Output is a pure function of the inputs.

use std::fmt::Write as _;
use std::path::Path;

use gedi::{Error, Result, Tensor};

use crate::CliError;

const SIZE: f64 = 480.0;
const PAD: f64 = 24.0;

/// Tableau-like qualitative palette; labels beyond it wrap around.
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2", "#edc948", "#9c755f",
];

/// Axis-aligned view box mapping data coordinates onto the canvas.
#[derive(Clone, Copy, Debug)]
struct View {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl View {
    fn fit(points: &Tensor, margin: f64) -> Result<Self> {
        let (n, _) = points.dims2()?;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..n {
            for j in 0..2 {
                lo[j] = lo[j].min(points.row(i)[j]);
                hi[j] = hi[j].max(points.row(i)[j]);
            }
        }
        if n == 0 {
            (lo, hi) = ([-1.0; 2], [1.0; 2]);
        }
        for j in 0..2 {
            let span = (hi[j] - lo[j]).max(1e-9);
            lo[j] -= margin * span;
            hi[j] += margin * span;
        }
        Ok(Self { lo, hi })
    }

    fn contains(&self, p: &[f64]) -> bool {
        (0..2).all(|j| p[j] >= self.lo[j] && p[j] <= self.hi[j])
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        let w = SIZE - 2.0 * PAD;
        let x = PAD + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * w;
        let y = SIZE - PAD - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * w;
        (x, y)
    }
}

fn check_points(points: &Tensor) -> Result<()> {
    let (_, d) = points.dims2()?;
    if d != 2 {
        return Err(Error::param(format!("scatter plots need 2-D points, got {d} columns")));
    }
    if !points.is_finite() {
        return Err(Error::param("cannot plot non-finite points"));
    }
    Ok(())
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="#ffffff"/>"##);
    s
}

/// Points coloured by label, one palette colour per label value.
pub fn scatter_svg(points: &Tensor, labels: &[usize]) -> Result<String> {
    check_points(points)?;
    if labels.len() != points.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} points",
            labels.len(),
            points.rows()
        )));
    }
    let view = View::fit(points, 0.05)?;
    let mut s = header("cluster assignments");
    for (i, &l) in labels.iter().enumerate() {
        let (x, y) = view.map(points.row(i));
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}" class="c{l}"/>"#,
            PALETTE[l % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_scatter_svg(points: &Tensor, labels: &[usize], path: &Path) -> Result<(), CliError> {
    crate::write_file(path, &scatter_svg(points, labels)?)
}

/// Data as grey circles with model samples drawn as red squares on top. The
/// view is fitted to the data; samples outside it are counted in the title
/// and not drawn.
pub fn samples_svg(data: &Tensor, samples: &Tensor) -> Result<String> {
    check_points(data)?;
    check_points(samples)?;
    let view = View::fit(data, 0.25)?;
    let outside = (0..samples.rows())
        .filter(|&i| !view.contains(samples.row(i)))
        .count();
    let mut s = header(&format!(
        "data ({}) and model samples ({}, {} outside view)",
        data.rows(),
        samples.rows(),
        outside
    ));
    for i in 0..data.rows() {
        let (x, y) = view.map(data.row(i));
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#9a9a9a"/>"##);
    }
    for i in 0..samples.rows() {
        let p = samples.row(i);
        if !view.contains(p) {
            continue;
        }
        let (x, y) = view.map(p);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="3" height="3" fill="#d62728" fill-opacity="0.6"/>"##,
            x - 1.5,
            y - 1.5
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_samples_svg(data: &Tensor, samples: &Tensor, path: &Path) -> Result<(), CliError> {
    crate::write_file(path, &samples_svg(data, samples)?)
}

/// Linear ramp from dark blue (0) to yellow (1).
fn ramp(v: f64) -> String {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0))
}

/// `values[i][j]` for row label `rows[i]` and column label `cols[j]`, each
/// cell annotated with its value.
pub fn heatmap_svg(rows: &[f64], cols: &[f64], values: &[Vec<f64>], row_name: &str, col_name: &str) -> Result<String> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::param("heat map needs at least one row and one column"));
    }
    if values.len() != rows.len() || values.iter().any(|r| r.len() != cols.len()) {
        return Err(Error::dim("heat map values do not match the axes"));
    }
    let left = 64.0;
    let top = 32.0;
    let cell = ((SIZE - left - PAD) / cols.len() as f64).min((SIZE - top - 48.0) / rows.len() as f64);
    let mut s = header(&format!("test NMI over {row_name} (rows) and {col_name} (columns)"));
    for (i, (r, vals)) in rows.iter().zip(values).enumerate() {
        let y = top + i as f64 * cell;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{r}</text>"#,
            left - 6.0,
            y + cell / 2.0 + 4.0
        );
        for (j, v) in vals.iter().enumerate() {
            let x = left + j as f64 * cell;
            let ink = if *v > 0.6 { "#000000" } else { "#ffffff" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
                ramp(*v)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    let base = top + rows.len() as f64 * cell;
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{c}</text>"#,
            left + (j as f64 + 0.5) * cell,
            base + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{col_name}</text>"#,
        left + cols.len() as f64 * cell / 2.0,
        base + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{row_name}</text>"#,
        top + rows.len() as f64 * cell / 2.0,
        top + rows.len() as f64 * cell / 2.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}
