//! Budget arithmetic: head-room and firing probability for a few partitions.
//!
//! cargo run --example privacy_plan

use ferret_lab::accountant::{epsilon_max, nats_to_bits, optimal_p, AccountantConfig};
use ferret_lab::Error;

fn main() -> ferret_lab::Result<()> {
    let (steps, rate, target) = (1000, 0.005, 0.5);
    println!("T={steps} s={rate} target={target} nats");
    println!("{:>8} {:>12} {:>12} {:>12}", "groups", "eps_max", "p*", "E[fired]");
    for groups in [1u64, 2, 50, 200] {
        let emax = epsilon_max(groups, steps, rate)?;
        let p = optimal_p(target, groups, steps, rate)?;
        println!(
            "{groups:>8} {emax:>12.4} {p:>12.4e} {:>12.2}",
            p * (groups * steps) as f64
        );
    }

    let plan = AccountantConfig::new(2, steps, rate, target)?.plan()?;
    println!(
        "\nG=2 spends {:.4} nats ({:.4} bits) of {:.4} available",
        plan.epsilon_achieved,
        nats_to_bits(plan.epsilon_achieved),
        plan.epsilon_max
    );

    // asking for more than the head-room is refused rather than clamped
    match optimal_p(10.0, 2, steps, rate) {
        Err(Error::BudgetInfeasible { epsilon, epsilon_max }) => {
            println!("eps={epsilon} refused: head-room is only {epsilon_max:.4}")
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
