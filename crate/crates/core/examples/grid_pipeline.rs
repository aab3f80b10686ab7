//! The full CLI pipeline driven from the library: train a small grid, score
//! every run, and join the results. Equivalent to
//! `ferret-lab train`, `ferret-lab mia`, `ferret-lab report`.
//!
//! cargo run --release --example grid_pipeline [OUT_DIR]

use std::path::PathBuf;

use ferret_lab::experiment::{cmd_mia_all, cmd_report, cmd_train, ExperimentConfig, RunOptions};

const GRID: &str = include_str!("../configs/grid.json");

fn main() -> ferret_lab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ferret-lab-grid"));
    let cfg = ExperimentConfig::from_json(GRID)?;
    let dirs = cmd_train(&cfg, &out, &RunOptions::default())?;
    println!("trained {} runs under {}", dirs.len(), out.display());
    println!("scored {} runs", cmd_mia_all(&out, None)?);
    for r in cmd_report(&out)? {
        println!(
            "{:<14} eps={:<4} seed={} loss={:.4} auc={:.3}",
            r.method,
            r.epsilon,
            r.seed,
            r.final_loss.unwrap_or(f64::NAN),
            r.auc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
