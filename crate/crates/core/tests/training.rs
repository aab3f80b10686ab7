mod common;

use rayon::prelude::*;

use common::rel_err;
use ferret_lab::accountant::{epsilon_max, optimal_p};
use ferret_lab::evaluation::{evaluate_mia, mia_scores};
use ferret_lab::mechanism::{partition_groups, FiringStats, MechanismConfig, PartitionScheme};
use ferret_lab::models::{
    finite_diff_grad, loss_and_grad, per_example_grads, synth_dataset, GradientBundle, ModelKind, ToyModel,
};
use ferret_lab::trainers::{train, train_ferret, Method, OptimizerRule, TrainConfig};

fn sgd(method: Method, steps: u64, batch: f64, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch,
        lr,
        method,
        optimizer: OptimizerRule::Sgd,
        seed,
    }
}

#[test]
fn ferret_at_half_headroom_reduces_loss() {
    let kind = ModelKind::LinearRegression;
    let (n, d, batch, steps) = (200usize, 8usize, 10.0, 2000u64);
    let improved = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let (members, _) = synth_dataset(kind, n, d, 0.1, seed).unwrap();
            let m0 = ToyModel::init(kind, d, seed).unwrap();
            let g = partition_groups(&m0.shapes(), PartitionScheme::Max).unwrap().num_groups() as u64;
            let rate = batch / n as f64;
            let p = optimal_p(epsilon_max(g, steps, rate).unwrap() / 2.0, g, steps, rate).unwrap();
            assert!((p - 0.5).abs() < 1e-12);
            let method = Method::Ferret {
                mechanism: MechanismConfig::new(p, 1.0, 0.0).unwrap(),
                scheme: PartitionScheme::Max,
            };
            let run = train_ferret(m0, &members, &sgd(method, steps, batch, 0.01, seed)).unwrap();
            run.final_loss() < run.initial_loss
        })
        .count();
    assert!(improved >= 95, "loss fell in only {improved}/100 seeds");
}

#[test]
fn logged_firings_match_the_audit_counts() {
    let kind = ModelKind::LogisticRegression;
    let (members, _) = synth_dataset(kind, 100, 3, 0.3, 2).unwrap();
    let m0 = ToyModel::init(kind, 3, 2).unwrap();
    let method = Method::Ferret {
        mechanism: MechanismConfig::new(0.3, 1.0, 0.0).unwrap(),
        scheme: PartitionScheme::Max,
    };
    let run = train_ferret(m0, &members, &sgd(method, 300, 10.0, 0.05, 2)).unwrap();
    let groups = run.partition.as_ref().unwrap().num_groups();
    let stats = FiringStats::from_log(run.log.as_ref().unwrap(), groups, 300, 0.3);
    assert_eq!(stats.total(), run.fired_count());
    assert_eq!(run.fired_trace.iter().sum::<u64>(), run.fired_count());
    // the realized leakage never exceeds the worst case where every release fires
    assert!(run.realized_epsilon().unwrap() <= epsilon_max(2, 300, 0.1).unwrap() + 1e-12);
}

#[test]
fn finite_difference_error_shrinks_quadratically() {
    let kind = ModelKind::Mlp { hidden: 6 };
    let (data, _) = synth_dataset(kind, 12, 3, 0.2, 4).unwrap();
    let model = ToyModel::init(kind, 3, 4).unwrap();
    let idx: Vec<usize> = (0..12).collect();
    let exact = loss_and_grad(&model, &data, &idx).unwrap().grads.concat();
    let err = |h| rel_err(&finite_diff_grad(&model, &data, &idx, h).unwrap().grads.concat(), &exact);
    let ratio = err(1e-2) / err(5e-3);
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn parallel_per_example_sum_matches_sequential() {
    let kind = ModelKind::Mlp { hidden: 8 };
    let (data, _) = synth_dataset(kind, 1000, 6, 0.2, 9).unwrap();
    let model = ToyModel::init(kind, 6, 9).unwrap();
    let idx: Vec<usize> = (0..1000).collect();
    assert_eq!(per_example_grads(&model, &data, &idx).unwrap().len(), 1000);
    let mut seq = GradientBundle::zeros_like(&model);
    for &i in &idx {
        seq.add_scaled(&model.example_grad(&data.features[i], data.targets[i]), 1.0);
    }
    seq.scale(1.0 / 1000.0);
    let par = loss_and_grad(&model, &data, &idx).unwrap();
    assert_eq!(par.grads, seq.grads);
}

#[test]
fn overfit_model_scores_members_higher() {
    let kind = ModelKind::LinearRegression;
    let (members, nonmembers) = synth_dataset(kind, 30, 40, 0.5, 6).unwrap();
    let m0 = ToyModel::init(kind, 40, 6).unwrap();
    let run = train(m0, &members, &sgd(Method::NonPrivate, 3000, 30.0, 0.05, 6)).unwrap();
    let (ms, ns) = mia_scores(&run.model, &members, &nonmembers).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&ms) > mean(&ns));
    assert!(run.final_loss() < 0.01);
}

#[test]
fn untrained_model_gives_chance_auc() {
    let kind = ModelKind::LinearRegression;
    let (members, nonmembers) = synth_dataset(kind, 2000, 10, 0.5, 11).unwrap();
    let model = ToyModel::init(kind, 10, 11).unwrap();
    let auc = evaluate_mia(&model, &members, &nonmembers).unwrap().auc;
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

#[test]
fn transcripts_are_reproducible() {
    let kind = ModelKind::LinearRegression;
    let (members, _) = synth_dataset(kind, 50, 4, 0.1, 1).unwrap();
    let m0 = ToyModel::init(kind, 4, 1).unwrap();
    let method = Method::Ferret {
        mechanism: MechanismConfig::new(0.4, 1.0, 0.01).unwrap(),
        scheme: PartitionScheme::Two,
    };
    let a = train_ferret(m0.clone(), &members, &sgd(method.clone(), 100, 5.0, 0.05, 8)).unwrap();
    let b = train_ferret(m0, &members, &sgd(method, 100, 5.0, 0.05, 8)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_trace, b.loss_trace);
}
