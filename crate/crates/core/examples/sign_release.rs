//! One mechanism step on a hand-made gradient, the bits it releases, and how
//! a receiver holding only the transcript and the seed rebuilds the update.
//!
//! cargo run --example sign_release

use ferret_lab::mechanism::{
    ferret_step, partition_groups, reconstruct_delta, update_payload, MechanismConfig, PartitionScheme, UpdateLog,
};

fn main() -> ferret_lab::Result<()> {
    // three tensors of very different sizes; one group each
    let shapes = [(0, 1), (1, 10), (2, 10_000)];
    let partition = partition_groups(&shapes, PartitionScheme::Max)?;
    let cfg = MechanismConfig::new(0.5, 1.0, 0.0)?;
    let grads: Vec<Vec<f64>> = partition
        .dims()
        .iter()
        .map(|&d| (0..d).map(|i| (i as f64 * 0.37).sin()).collect())
        .collect();

    let seed = 42;
    let mut log = UpdateLog::default();
    for step in 0..4 {
        for u in ferret_step(&grads, &partition, &cfg, step, seed)? {
            let bits = if u.fired { update_payload(&u).bit_len } else { 0 };
            println!(
                "step {step} group {} (d_g={:>5}): fired={} sign={:?} private bits={bits}",
                u.group,
                partition.group_dim(u.group),
                u.fired,
                u.sign.map(|s| s.value()),
            );
            log.push(&u);
        }
    }
    let payload = log.private_payload();
    println!(
        "\n{} fired releases packed into {} bytes ({} bits)",
        log.fired_count(),
        payload.bytes.len(),
        payload.bit_len
    );

    // replay: the direction is public, so the sign alone recovers the delta
    let rec = log.records.iter().find(|r| r.fired).expect("something fired");
    let delta = reconstruct_delta(rec, &partition, &cfg, seed)?;
    let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("rebuilt delta for step {} group {}: norm {norm:.6}", rec.step, rec.group);
    Ok(())
}
