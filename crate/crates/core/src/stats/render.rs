use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CompositionSummary, DistributionReport};
use crate::data::Label;

const CSV_HEADER: &str = "dimension,bin,label,count,pct";

/// CSV text for one report: one row per bin and label.
pub fn report_csv(report: &DistributionReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for h in &report.per_label {
        for (i, bin) in report.bins.iter().enumerate() {
            writeln!(out, "{},{bin},{},{},{:.4}", report.dimension, h.label, h.counts[i], h.pct(i)).unwrap();
        }
    }
    out
}

fn colour(label: Label) -> &'static str {
    match label {
        Label::Real => "#4c72b0",
        Label::Generated => "#dd8452",
    }
}

/// Grouped bar chart of the per-label percentages.
pub fn report_svg(report: &DistributionReport) -> String {
    let (w, h, margin) = (640.0, 360.0, 48.0);
    let plot_h = h - 2.0 * margin;
    let group_w = (w - 2.0 * margin) / report.bins.len() as f64;
    let bar_w = group_w * 0.8 / report.per_label.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{} distribution (% of label)</text>\n",
        w / 2.0,
        report.dimension
    );
    let base = h - margin;
    writeln!(svg, "<line x1=\"{margin}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>", w - margin).unwrap();
    for (i, bin) in report.bins.iter().enumerate() {
        let gx = margin + i as f64 * group_w;
        for (j, hist) in report.per_label.iter().enumerate() {
            let bh = plot_h * hist.pct(i) / 100.0;
            let x = gx + group_w * 0.1 + j as f64 * bar_w;
            writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{bh:.1}\" fill=\"{}\"><title>{} {bin}: {:.2}%</title></rect>",
                base - bh,
                colour(hist.label),
                hist.label,
                hist.pct(i)
            )
            .unwrap();
        }
        writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{bin}</text>", gx + group_w / 2.0, base + 16.0).unwrap();
    }
    for (j, hist) in report.per_label.iter().enumerate() {
        let y = 36.0 + 14.0 * j as f64;
        writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            w - 140.0,
            y - 9.0,
            colour(hist.label),
            w - 125.0,
            y,
            hist.label
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<dimension>.csv` and `<dimension>.svg` per report and returns
/// the CSV paths.
pub fn render_report(reports: &[DistributionReport], out: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(reports.len());
    for r in reports {
        let csv = out.join(format!("{}.csv", r.dimension));
        fs::write(&csv, report_csv(r))?;
        fs::write(out.join(format!("{}.svg", r.dimension)), report_svg(r))?;
        written.push(csv);
    }
    Ok(written)
}

/// Writes `composition.csv`: one row per group plus a total row.
pub fn write_composition_csv(summary: &CompositionSummary, out: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(out)?;
    let mut text = String::from("category,method,source,model,count\n");
    for r in &summary.rows {
        writeln!(text, "{},{},{},{},{}", r.category, r.method, r.source, r.model, r.count).unwrap();
    }
    writeln!(text, "total,,,,{}", summary.total_clips).unwrap();
    let path = out.join("composition.csv");
    fs::write(&path, text)?;
    Ok(path)
}
