//! Composition table and distribution histograms of the shipped dataset
//! description, written as CSV and SVG.
//!
//! cargo run --release --example dataset_stats -- [out_dir]

use std::path::PathBuf;

use dub3d::data::{Composition, Label};
use dub3d::stats::{composition_summary, histogram, render_report, write_composition_csv, Dimension};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/stats".into()));
    std::fs::create_dir_all(&out)?;
    let composition = Composition::shipped();
    let entries: Vec<_> = composition.entries().collect();

    let summary = composition_summary(&entries);
    for row in &summary.rows {
        println!("{:20} {:10} {:12} {:16} {:>9}", row.category, row.method, row.source, row.model, row.count);
    }
    println!("total {} clips, {:.1} hours", summary.total_clips, summary.total_hours);
    write_composition_csv(&summary, &out)?;

    let reports: Vec<_> = Dimension::ALL.iter().map(|&d| histogram(d, &entries, None)).collect();
    for r in &reports {
        let real = r.label(Label::Real).expect("real clips present");
        let top = (0..r.bins.len()).max_by(|&a, &b| real.pct(a).total_cmp(&real.pct(b))).unwrap();
        println!("{}: most real clips fall in {} ({:.1}%)", r.dimension, r.bins[top], real.pct(top));
    }
    for path in render_report(&reports, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
