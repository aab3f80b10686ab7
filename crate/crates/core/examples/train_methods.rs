//! FERRET against DP-SGD-lite and plain SGD on the same data and batches.
//!
//! cargo run --release --example train_methods

use ferret_lab::accountant::optimal_p;
use ferret_lab::mechanism::{partition_groups, MechanismConfig, PartitionScheme};
use ferret_lab::models::{eval_metrics, synth_dataset, ModelKind, ToyModel};
use ferret_lab::trainers::{train, Method, OptimizerRule, TrainConfig};

fn main() -> ferret_lab::Result<()> {
    let kind = ModelKind::LogisticRegression;
    let (n, d, batch, steps, seed) = (1000, 10, 20.0, 2000, 7);
    let (members, nonmembers) = synth_dataset(kind, n, d, 0.3, seed)?;
    let m0 = ToyModel::init(kind, d, seed)?;

    let scheme = PartitionScheme::Two;
    let groups = partition_groups(&m0.shapes(), scheme)?.num_groups() as u64;
    let p = optimal_p(1.0, groups, steps, batch / n as f64)?;

    let methods = [
        Method::Ferret {
            mechanism: MechanismConfig::new(p, 1.0, 0.0)?,
            scheme,
        },
        Method::DpsgdLite {
            clip: 1.0,
            noise_sigma: 1.0,
        },
        Method::NonPrivate,
    ];
    for method in methods {
        let cfg = TrainConfig {
            steps,
            batch,
            lr: 0.1,
            method,
            optimizer: OptimizerRule::Sgd,
            seed,
        };
        let run = train(m0.clone(), &members, &cfg)?;
        let held = eval_metrics(&run.model, &nonmembers)?;
        println!(
            "{:<14} train nll {:.4} -> {:.4}  held-out nll {:.4} (perplexity {:.3})  fired {}",
            run.method,
            run.initial_loss,
            run.final_loss(),
            held.nll.unwrap_or(f64::NAN),
            held.perplexity_analog.unwrap_or(f64::NAN),
            run.fired_count(),
        );
    }
    println!("FERRET firing probability at eps=1: {p:.4}");
    Ok(())
}
