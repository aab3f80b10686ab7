//! How much Gaussian dither the one-bit update tolerates before accuracy
//! degrades.
//!
//! cargo run --release --example dither_sweep

use ferret_lab::experiment::{run_dither_sweep, DatasetSpec, DitherSweepConfig};
use ferret_lab::mechanism::PartitionScheme;
use ferret_lab::models::ModelKind;
use ferret_lab::trainers::OptimizerRule;

fn main() -> ferret_lab::Result<()> {
    let cfg = DitherSweepConfig {
        dataset: DatasetSpec {
            kind: ModelKind::LinearRegression,
            n: 500,
            dim: 32,
            noise_sigma: 0.05,
            seed: 0,
        },
        batch: 50.0,
        lr: 0.01,
        steps: 2000,
        optimizer: OptimizerRule::Sgd,
        scheme: PartitionScheme::Max,
        p: 0.5,
        c: 1.0,
        sigmas: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
        seeds: (0..5).collect(),
        output_dir: None,
    };
    println!("{:>8} {:>10} {:>10} {:>10}", "sigma", "q25", "median", "q75");
    for row in run_dither_sweep(&cfg, None)? {
        println!("{:>8} {:>10.5} {:>10.5} {:>10.5}", row.sigma, row.q25, row.median, row.q75);
    }
    Ok(())
}
