//! The command pipeline on the bundled synthetic plate-appearance file:
//! ingest one season, search and fit a tree, test the age groups overall
//! and pairwise, and draw the correlation heatmaps.
//!
//!     cargo run --release --example baseball_pipeline -- [out_dir]

use clap::Parser;
use ldm::cli::{run, Cli};

fn ldm(args: &[&str]) -> ldm::Result<()> {
    let cli = Cli::parse_from(std::iter::once("ldm").chain(args.iter().copied()));
    print!("{}", run(&cli)?);
    println!();
    Ok(())
}

fn main() -> ldm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into());
    std::fs::create_dir_all(&out)?;
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_pa.csv");
    let p = |f: &str| format!("{out}/{f}");

    ldm(&["ingest", "--input", data, "--season", "2000", "--out", &p("panel.json")])?;
    ldm(&["treefit", "--panel", &p("panel.json"), "--out", &p("tree.json"), "--trace-csv", &p("trace.csv")])?;
    ldm(&["test", "--panel", &p("panel.json"), "--tree", "baseball", "--out", &p("report.json"), "--csv", &p("report.csv")])?;
    ldm(&["pairwise", "--panel", &p("panel.json"), "--tree", "baseball", "--bonferroni", "--out", &p("pairwise.json")])?;
    ldm(&["heatmap", "--panel", &p("panel.json"), "--out", &p("heatmap.svg")])?;
    println!("artifacts in {out}/");
    Ok(())
}
