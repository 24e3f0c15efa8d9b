//! SVG renderings of the rank, scatter and t-SNE figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{RankReport, ReportError, Result};

/// Input of one figure.
#[derive(Debug, Clone, Copy)]
pub enum Figure<'a> {
    CdDiagram(&'a [(String, RankReport)]),
    ScatterCompare(&'a ScatterPlot),
    TsnePlot(&'a [TsnePanel], &'a [String]),
}

impl Figure<'_> {
    pub fn render(&self) -> String {
        match self {
            Figure::CdDiagram(reports) => cd_diagram_svg(reports),
            Figure::ScatterCompare(plot) => scatter_svg(plot),
            Figure::TsnePlot(panels, names) => tsne_svg(panels, names),
        }
    }
}

/// Renders `figure` as SVG into `path`.
pub fn emit_figure(figure: Figure<'_>, path: impl AsRef<Path>) -> Result<()> {
    write_figure(path, &figure.render())
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_figure(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, svg).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })
}

const CD_WIDTH: f64 = 640.0;
const CD_MARGIN: f64 = 110.0;
const CD_PANEL: f64 = 170.0;

/// Horizontal position of rank `r` on an axis running from 1 to `k`.
pub fn cd_rank_x(rank: f64, k: usize) -> f64 {
    let span = (k.max(2) - 1) as f64;
    CD_MARGIN + (rank - 1.0) / span * (CD_WIDTH - 2.0 * CD_MARGIN)
}

/// One panel per model: methods on a rank axis (rank 1 on the left) with a bar under
/// every clique.
pub fn cd_diagram_svg(reports: &[(String, RankReport)]) -> String {
    let height = CD_PANEL * reports.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CD_WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    for (p, (model, report)) in reports.iter().enumerate() {
        let top = p as f64 * CD_PANEL;
        let k = report.methods.len();
        let axis_y = top + 40.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-weight="bold">{}</text>"#,
            10.0,
            top + 16.0,
            escape(model)
        );
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
            cd_rank_x(1.0, k),
            cd_rank_x(k as f64, k)
        );
        for r in 1..=k {
            let x = cd_rank_x(r as f64, k);
            let _ = writeln!(
                s,
                r#"<line class="tick" x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{axis_y:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#,
                axis_y - 5.0,
                axis_y - 8.0
            );
        }
        let ranking = report.ranking();
        let half = ranking.len().div_ceil(2);
        for (i, (method, rank)) in ranking.iter().enumerate() {
            let x = cd_rank_x(*rank, k);
            let left = i < half;
            let row = if left { i } else { ranking.len() - 1 - i };
            let label_y = axis_y + 45.0 + 16.0 * row as f64;
            let label_x = if left { CD_MARGIN - 10.0 } else { CD_WIDTH - CD_MARGIN + 10.0 };
            let anchor = if left { "end" } else { "start" };
            let _ = writeln!(
                s,
                r#"<polyline class="method" data-method="{m}" data-rank="{rank:.4}" points="{x:.1},{axis_y:.1} {x:.1},{label_y:.1} {label_x:.1},{label_y:.1}" fill="none" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{m} ({rank:.2})</text>"#,
                if left { label_x - 4.0 } else { label_x + 4.0 },
                label_y + 4.0,
                m = escape(method)
            );
        }
        for (c, clique) in report.cliques.iter().enumerate() {
            let ranks: Vec<f64> = clique
                .iter()
                .filter_map(|m| report.methods.iter().position(|x| x == m))
                .map(|i| report.average_ranks[i])
                .collect();
            let lo = ranks.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ranks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = axis_y + 12.0 + 6.0 * c as f64;
            let _ = writeln!(
                s,
                r#"<line class="clique" x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black" stroke-width="4" stroke-linecap="round"/>"#,
                cd_rank_x(lo, k) - 3.0,
                cd_rank_x(hi, k) + 3.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Per-dataset accuracies of two methods, `y` against `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// `(dataset, x accuracy, y accuracy)`.
    pub points: Vec<(String, f64, f64)>,
}

const SC_SIZE: f64 = 400.0;
const SC_PAD: f64 = 50.0;

impl ScatterPlot {
    /// Pixel position of an accuracy pair; the plot spans `[0, 1]` on both axes.
    pub fn to_pixels(x: f64, y: f64) -> (f64, f64) {
        let side = SC_SIZE - 2.0 * SC_PAD;
        (SC_PAD + x * side, SC_SIZE - SC_PAD - y * side)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dataset,{},{}\n", self.x_label, self.y_label);
        for (d, x, y) in &self.points {
            let _ = writeln!(out, "{d},{x:.4},{y:.4}");
        }
        out
    }
}

pub fn scatter_svg(plot: &ScatterPlot) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SC_SIZE}" height="{SC_SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let (x0, y0) = ScatterPlot::to_pixels(0.0, 0.0);
    let (x1, y1) = ScatterPlot::to_pixels(1.0, 1.0);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        s,
        r#"<line class="diagonal" x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y1:.1}" stroke="gray" stroke-dasharray="4 3"/>"#
    );
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let (px, _) = ScatterPlot::to_pixels(v, 0.0);
        let (_, py) = ScatterPlot::to_pixels(0.0, v);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            y0 + 16.0,
            x0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        SC_SIZE / 2.0,
        SC_SIZE - 10.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        SC_SIZE / 2.0,
        SC_SIZE / 2.0,
        escape(&plot.y_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-weight="bold">{}</text>"#,
        SC_SIZE / 2.0,
        escape(&plot.title)
    );
    for (d, x, y) in &plot.points {
        let (px, py) = ScatterPlot::to_pixels(*x, *y);
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{px:.2}" cy="{py:.2}" r="3.5" fill="{}" fill-opacity="0.7"><title>{}</title></circle>"#,
            color(0),
            escape(d)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One t-SNE panel.
#[derive(Debug, Clone)]
pub struct TsnePanel {
    pub title: String,
    pub coords: Array2<f64>,
    pub labels: Vec<usize>,
}

const TS_SIZE: f64 = 360.0;

/// Panels stacked vertically, one colour per class and a legend of `class_names`.
pub fn tsne_svg(panels: &[TsnePanel], class_names: &[String]) -> String {
    let legend_h = 20.0 * class_names.len() as f64 + 20.0;
    let height = TS_SIZE * panels.len() as f64 + legend_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{TS_SIZE}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    for (p, panel) in panels.iter().enumerate() {
        let top = p as f64 * TS_SIZE;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#,
            TS_SIZE / 2.0,
            top + 18.0,
            escape(&panel.title)
        );
        let extent = panel
            .coords
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        let scale = (TS_SIZE / 2.0 - 30.0) / extent;
        for (row, &label) in panel.coords.outer_iter().zip(&panel.labels) {
            let _ = writeln!(
                s,
                r#"<circle class="point" data-class="{label}" cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                TS_SIZE / 2.0 + row[0] * scale,
                top + TS_SIZE / 2.0 + 10.0 - row[1] * scale,
                color(label)
            );
        }
    }
    let legend_top = TS_SIZE * panels.len() as f64 + 10.0;
    for (i, name) in class_names.iter().enumerate() {
        let y = legend_top + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><circle cx="20" cy="{y:.1}" r="5" fill="{}"/><text x="32" y="{:.1}">{}</text></g>"#,
            color(i),
            y + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
