//! Loss-threshold membership inference against an over-fit non-private model
//! and a FERRET model trained on the same records.
//!
//! cargo run --release --example mia_audit

use ferret_lab::accountant::optimal_p;
use ferret_lab::evaluation::evaluate_mia;
use ferret_lab::mechanism::{partition_groups, MechanismConfig, PartitionScheme};
use ferret_lab::models::{synth_dataset, ModelKind, ToyModel};
use ferret_lab::trainers::{train, Method, OptimizerRule, TrainConfig};

fn main() -> ferret_lab::Result<()> {
    // more features than a member set can pin down, so plain SGD memorizes
    let kind = ModelKind::LinearRegression;
    let (n, d, batch, seed) = (200, 150, 20.0, 3);
    let steps = 100 * n as u64 / batch as u64;
    let (members, nonmembers) = synth_dataset(kind, n, d, 0.5, seed)?;
    let m0 = ToyModel::init(kind, d, seed)?;

    let scheme = PartitionScheme::Max;
    let groups = partition_groups(&m0.shapes(), scheme)?.num_groups() as u64;
    let p = optimal_p(1.0, groups, steps, batch / n as f64)?;
    let cfg = |method| TrainConfig {
        steps,
        batch,
        lr: 0.02,
        method,
        optimizer: OptimizerRule::Sgd,
        seed,
    };

    for method in [
        Method::NonPrivate,
        Method::Ferret {
            mechanism: MechanismConfig::new(p, 1.0, 0.0)?,
            scheme,
        },
    ] {
        let run = train(m0.clone(), &members, &cfg(method))?;
        let mia = evaluate_mia(&run.model, &members, &nonmembers)?;
        println!(
            "{:<12} member loss {:.4}  AUC {:.3}  advantage {:.3}",
            run.method,
            run.final_loss(),
            mia.auc,
            mia.advantage
        );
    }
    Ok(())
}
