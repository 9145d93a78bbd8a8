//! Hand-written SVG figures: embedding scatter plots, elbow curves and local
//! explanation panels.

use std::fmt::Write as _;
use std::path::Path;

use crate::cluster::ElbowCurve;
use crate::corpus::Diagnosis;
use crate::dimred::Embedding;
use crate::error::{invalid, Error, Result};
use crate::explain::LocalExplanation;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const LEGEND_WIDTH: f64 = 110.0;

const DIAGNOSIS_COLORS: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];
const CLUSTER_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy)]
pub enum Coloring<'a> {
    Diagnosis(&'a [Diagnosis]),
    Cluster(&'a [usize]),
}

struct Series {
    name: String,
    color: &'static str,
    rows: Vec<usize>,
}

impl Coloring<'_> {
    fn len(&self) -> usize {
        match self {
            Coloring::Diagnosis(l) => l.len(),
            Coloring::Cluster(l) => l.len(),
        }
    }

    /// Series in label order: HC, AD, MCI, Depr, then ascending cluster index.
    fn series(&self) -> Vec<Series> {
        match self {
            Coloring::Diagnosis(labels) => Diagnosis::ALL
                .iter()
                .filter_map(|d| {
                    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *d).collect();
                    (!rows.is_empty()).then(|| Series {
                        name: d.to_string(),
                        color: DIAGNOSIS_COLORS[d.index()],
                        rows,
                    })
                })
                .collect(),
            Coloring::Cluster(labels) => {
                let max = labels.iter().copied().max().unwrap_or(0);
                (0..=max)
                    .filter_map(|c| {
                        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                        (!rows.is_empty()).then(|| Series {
                            name: format!("cluster {c}"),
                            color: CLUSTER_COLORS[c % CLUSTER_COLORS.len()],
                            rows,
                        })
                    })
                    .collect()
            }
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from data range to a pixel interval; a flat range maps to the middle.
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, a: f64, b: f64) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
        Scale {
            lo: lo - pad,
            hi: hi + pad,
            a,
            b,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x0: f64, y0: f64, x1: f64, y1: f64, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y0 + 30.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        x0 - 30.0,
        (y0 + y1) / 2.0,
        x0 - 30.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

/// Component 1 vs component 2 scatter, one series per label value.
pub fn embedding_svg(embedding: &Embedding, coloring: Coloring, title: &str) -> Result<String> {
    let n = embedding.n_samples();
    if n == 0 {
        return Err(invalid!("cannot plot an empty embedding"));
    }
    if coloring.len() != n {
        return Err(invalid!("{} labels for {n} embedded samples", coloring.len()));
    }
    let c = &embedding.coords;
    let ycol = if embedding.dim() > 1 { 1 } else { 0 };
    let (x0, x1) = (MARGIN, WIDTH - MARGIN - LEGEND_WIDTH);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let sx = Scale::new((0..n).map(|i| c[(i, 0)]), x0, x1);
    let sy = Scale::new((0..n).map(|i| c[(i, ycol)]), y0, y1);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    axes(&mut out, x0, y0, x1, y1, "Component-1", "Component-2");
    let series = coloring.series();
    for s in &series {
        let _ = writeln!(out, r#"<g class="series" data-label="{}" fill="{}">"#, escape(&s.name), s.color);
        for &i in &s.rows {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill-opacity="0.75"/>"#,
                sx.map(c[(i, 0)]),
                sy.map(c[(i, ycol)])
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("<g class=\"legend\">\n");
    for (k, s) in series.iter().enumerate() {
        let y = MARGIN + 10.0 + 20.0 * k as f64;
        let lx = WIDTH - LEGEND_WIDTH - MARGIN + 20.0;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><circle cx="{lx:.1}" cy="{y:.1}" r="5" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            s.color,
            lx + 10.0,
            y + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn render_embedding_plot(embedding: &Embedding, coloring: Coloring, title: &str, path: &Path) -> Result<()> {
    write_file(path, &embedding_svg(embedding, coloring, title)?)
}

/// Inertia against K with the chosen K highlighted.
pub fn elbow_svg(curve: &ElbowCurve, title: &str) -> String {
    let (x0, x1) = (MARGIN + 20.0, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let sx = Scale::new(curve.k_values.iter().map(|&k| k as f64), x0, x1);
    let sy = Scale::new(curve.inertias.iter().copied(), y0, y1);
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    axes(&mut out, x0, y0, x1, y1, "K", "Inertia");
    let pts: Vec<String> = curve
        .k_values
        .iter()
        .zip(&curve.inertias)
        .map(|(&k, &v)| format!("{:.2},{:.2}", sx.map(k as f64), sy.map(v)))
        .collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, pts.join(" "));
    for (&k, &v) in curve.k_values.iter().zip(&curve.inertias) {
        let chosen = k == curve.chosen_k;
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{}"/>"##,
            sx.map(k as f64),
            sy.map(v),
            if chosen { 6 } else { 3 },
            if chosen { "#d62728" } else { "#1f77b4" }
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{k}</text>"#,
            sx.map(k as f64),
            y0 + 15.0
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_elbow_plot(curve: &ElbowCurve, title: &str, path: &Path) -> Result<()> {
    write_file(path, &elbow_svg(curve, title))
}

/// Neighborhood scatter with point opacity from the kernel weight, arrows for
/// the top features' local directions, and a weight bar chart per axis.
pub fn explanation_svg(explanation: &LocalExplanation, embedding: &Embedding) -> Result<String> {
    let dim = embedding.dim();
    let idx = embedding
        .sample_ids
        .iter()
        .position(|s| *s == explanation.instance_id)
        .ok_or_else(|| invalid!("instance {} is not in the embedding", explanation.instance_id))?;
    let ycol = if dim > 1 { 1 } else { 0 };
    let c = &embedding.coords;
    let rows: Vec<usize> = if explanation.neighborhood_ids.is_empty() {
        vec![idx]
    } else {
        explanation
            .neighborhood_ids
            .iter()
            .filter_map(|id| embedding.sample_ids.iter().position(|s| s == id))
            .collect()
    };
    let width = WIDTH + 360.0;
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let sx = Scale::new(rows.iter().map(|&i| c[(i, 0)]), x0, x1);
    let sy = Scale::new(rows.iter().map(|&i| c[(i, ycol)]), y0, y1);

    let mut out = String::new();
    header(&mut out, width, HEIGHT, &format!("Local explanation of {}", explanation.instance_id));
    axes(&mut out, x0, y0, x1, y1, "Component-1", "Component-2");
    let (cx, cy) = (c[(idx, 0)], c[(idx, ycol)]);
    out.push_str("<g class=\"neighborhood\" fill=\"#1f77b4\">\n");
    for &i in &rows {
        let d2 = (c[(i, 0)] - cx).powi(2) + (c[(i, ycol)] - cy).powi(2);
        let w = (-d2 / explanation.kernel_width.powi(2)).exp();
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill-opacity="{:.3}"/>"#,
            sx.map(c[(i, 0)]),
            sy.map(c[(i, ycol)]),
            0.15 + 0.85 * w
        );
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r##"<circle class="instance" cx="{:.2}" cy="{:.2}" r="6" fill="#d62728"/>"##,
        sx.map(cx),
        sy.map(cy)
    );

    // local direction of each top feature: (weight on axis 1, weight on axis 2)
    let mut tops: Vec<usize> = Vec::new();
    for axis in &explanation.per_axis {
        for f in &axis.top_features {
            if let Some(j) = explanation.feature_names.iter().position(|n| n == f) {
                if !tops.contains(&j) {
                    tops.push(j);
                }
            }
        }
    }
    let wx = |j: usize| explanation.per_axis.first().map_or(0.0, |a| a.weights[j]);
    let wy = |j: usize| explanation.per_axis.get(ycol).map_or(0.0, |a| a.weights[j]);
    let longest = tops.iter().map(|&j| wx(j).hypot(wy(j))).fold(0.0, f64::max);
    if longest > 0.0 {
        let reach = 0.3 * (x1 - x0).min(y0 - y1);
        out.push_str("<g class=\"local-axes\" stroke=\"#444\">\n");
        for &j in &tops {
            let (dx, dy) = (wx(j) / longest * reach, -wy(j) / longest * reach);
            let (px, py) = (sx.map(cx), sy.map(cy));
            let _ = writeln!(
                out,
                r#"<line x1="{px:.2}" y1="{py:.2}" x2="{:.2}" y2="{:.2}"/><text x="{:.2}" y="{:.2}" stroke="none" font-size="10">{}</text>"#,
                px + dx,
                py + dy,
                px + dx,
                py + dy,
                escape(&explanation.feature_names[j])
            );
        }
        out.push_str("</g>\n");
    }

    // bar charts
    let panel_x = WIDTH + 10.0;
    let panel_h = (HEIGHT - 2.0 * MARGIN) / explanation.per_axis.len().max(1) as f64;
    for (a, axis) in explanation.per_axis.iter().enumerate() {
        let top = MARGIN + a as f64 * panel_h;
        let _ = writeln!(
            out,
            r#"<text x="{panel_x:.1}" y="{:.1}">W{} (R² = {:.3})</text>"#,
            top + 12.0,
            a + 1,
            axis.r2
        );
        let max = axis
            .top_features
            .iter()
            .filter_map(|f| explanation.feature_names.iter().position(|n| n == f))
            .map(|j| axis.weights[j].abs())
            .fold(0.0, f64::max);
        let mid = panel_x + 240.0;
        for (r, f) in axis.top_features.iter().enumerate() {
            let Some(j) = explanation.feature_names.iter().position(|n| n == f) else {
                continue;
            };
            let w = axis.weights[j];
            let len = if max > 0.0 { w.abs() / max * 90.0 } else { 0.0 };
            let y = top + 22.0 + 16.0 * r as f64;
            let x = if w < 0.0 { mid - len } else { mid };
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text><rect x="{x:.1}" y="{:.1}" width="{len:.2}" height="10" fill="{}"/>"##,
                mid - 95.0,
                y + 9.0,
                escape(f),
                y,
                if w < 0.0 { "#d62728" } else { "#2ca02c" }
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_explanation_panel(explanation: &LocalExplanation, embedding: &Embedding, path: &Path) -> Result<()> {
    write_file(path, &explanation_svg(explanation, embedding)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimred::Method;
    use nalgebra::DMatrix;

    fn emb(n: usize, d: usize) -> Embedding {
        let coords = DMatrix::from_fn(n, d, |i, j| (i * (j + 1)) as f64);
        Embedding::from_coords((0..n).map(|i| format!("s{i}")).collect(), coords, Method::Pca).unwrap()
    }

    #[test]
    fn four_series_and_legend() {
        let labels: Vec<Diagnosis> = (0..8).map(|i| Diagnosis::ALL[3 - i % 4]).collect();
        let svg = embedding_svg(&emb(8, 2), Coloring::Diagnosis(&labels), "t").unwrap();
        assert_eq!(svg.matches("class=\"series\"").count(), 4);
        assert_eq!(svg.matches("class=\"legend-entry\"").count(), 4);
        let order: Vec<usize> = ["\"HC\"", "\"AD\"", "\"MCI\"", "\"Depr\""]
            .iter()
            .map(|l| svg.find(&format!("data-label={l}")).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn three_dimensional_uses_first_two() {
        let e = emb(5, 3);
        let svg = embedding_svg(&e, Coloring::Cluster(&[0, 0, 1, 1, 2]), "t").unwrap();
        assert_eq!(svg.matches("r=\"3\" fill-opacity").count(), 5);
        assert!(svg.contains("Component-2"));
    }

    #[test]
    fn empty_embedding_is_rejected() {
        let e = Embedding::from_coords(vec![], DMatrix::zeros(0, 2), Method::Pca).unwrap();
        assert!(embedding_svg(&e, Coloring::Cluster(&[]), "t").is_err());
    }
}
