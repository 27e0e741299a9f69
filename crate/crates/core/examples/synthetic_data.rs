//! Writes a synthetic 14-outcome plate-appearance CSV.
//!
//!     cargo run --example synthetic_data -- [out.csv] [players] [seed]

use ldm::simlab::{synthetic_plate_appearances, SyntheticPanelConfig};

fn main() -> ldm::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic_pa.csv".into());
    let mut config = SyntheticPanelConfig::default();
    if let Some(p) = args.next() {
        config.players = p.parse().expect("players must be an integer");
    }
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("seed must be an integer");
    }
    let csv = synthetic_plate_appearances(&config)?;
    ldm::cli::write_atomic(out.as_ref(), csv.as_bytes())?;
    println!(
        "wrote {} batter-seasons to {out}",
        config.players * config.seasons.len()
    );
    Ok(())
}
