use std::fmt::Write as _;

use ndarray::ArrayView2;

use super::MetricsReport;
use crate::error::{Error, Result};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 140.0;
const MARGIN: f64 = 36.0;

fn polyline(values: &[f64], lo: f64, hi: f64, x0: f64, y0: f64, colour: &str) -> String {
    let n = values.len().max(2) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = x0 + PANEL_W * i as f64 / n as f64;
            let y = y0 + PANEL_H * (1.0 - (v - lo) / span);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// One panel per channel: truth in black, prediction in red.
pub fn trajectory_overlay_svg(pred: ArrayView2<f64>, truth: ArrayView2<f64>, labels: &[&str], title: &str) -> Result<String> {
    if pred.dim() != truth.dim() || pred.ncols() != labels.len() || pred.nrows() == 0 {
        return Err(Error::shape("plot", format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    let c = labels.len();
    let height = MARGIN + c as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    writeln!(svg, "<text x=\"{MARGIN}\" y=\"20\">{title}</text>").unwrap();
    for ch in 0..c {
        let p = pred.column(ch).to_vec();
        let t = truth.column(ch).to_vec();
        let lo = p.iter().chain(&t).copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().chain(&t).copied().fold(f64::NEG_INFINITY, f64::max);
        let y0 = MARGIN + ch as f64 * (PANEL_H + MARGIN);
        writeln!(
            svg,
            "<rect x=\"{MARGIN}\" y=\"{y0}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#bbb\"/>"
        )
        .unwrap();
        writeln!(svg, "<text x=\"{}\" y=\"{}\">{} (mm)</text>", MARGIN + 4.0, y0 + 12.0, labels[ch]).unwrap();
        svg.push_str(&polyline(&t, lo, hi, MARGIN, y0, "black"));
        svg.push_str(&polyline(&p, lo, hi, MARGIN, y0, "#d62728"));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Grouped bars of mean CC: one group per scenario, one bar per variant.
pub fn cc_bar_chart_svg(reports: &[MetricsReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to plot".into()));
    }
    let mut scenarios: Vec<&str> = Vec::new();
    let mut variants: Vec<&str> = Vec::new();
    for r in reports {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let bar_w = 18.0;
    let group_w = bar_w * variants.len() as f64 + 20.0;
    let plot_h = 220.0;
    let width = 2.0 * MARGIN + group_w * scenarios.len() as f64 + 120.0;
    let height = plot_h + 2.0 * MARGIN + 20.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let base = MARGIN + plot_h;
    writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
        width - 120.0
    )
    .unwrap();
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = base - plot_h * tick;
        writeln!(svg, "<text x=\"4\" y=\"{:.1}\">{tick:.2}</text>", y + 4.0).unwrap();
    }
    for (si, s) in scenarios.iter().enumerate() {
        let gx = MARGIN + 10.0 + si as f64 * group_w;
        for (vi, v) in variants.iter().enumerate() {
            let Some(r) = reports.iter().find(|r| r.scenario == *s && r.variant == *v) else {
                continue;
            };
            let cc = if r.mean_cc.is_finite() { r.mean_cc.max(0.0) } else { 0.0 };
            let h = plot_h * cc.min(1.0);
            writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"{}\"/>",
                gx + vi as f64 * bar_w,
                base - h,
                PALETTE[vi % PALETTE.len()]
            )
            .unwrap();
        }
        writeln!(svg, "<text x=\"{gx:.1}\" y=\"{:.1}\">{s}</text>", base + 16.0).unwrap();
    }
    for (vi, v) in variants.iter().enumerate() {
        let y = MARGIN + 14.0 * vi as f64;
        let x = width - 110.0;
        writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{v}</text>",
            PALETTE[vi % PALETTE.len()],
            x + 14.0,
            y + 9.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
