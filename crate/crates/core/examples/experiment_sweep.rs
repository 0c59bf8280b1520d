//! Run a small config end to end and print the metric table.
//!
//! `cargo run --release --example experiment_sweep -- configs/smoke.toml`

use std::path::PathBuf;

use sclmkb::harness::{mean_over_seeds, run_variants, ExperimentConfig, Variant};

fn main() -> sclmkb::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml")));
    let cfg = ExperimentConfig::load(&path)?;
    println!("config {} (hash {})", path.display(), &cfg.hash()[..12]);

    let records = run_variants(&cfg, &Variant::ALL)?;
    for rec in &records {
        for row in mean_over_seeds(&rec.metrics) {
            println!(
                "{:>9}  snr {:>5.1}  mAP {:.3}  rank1 {:.3}  nmse {:.3}",
                rec.variant.name(),
                row.snr_db,
                row.map,
                row.rank1,
                row.nmse
            );
        }
    }
    Ok(())
}
