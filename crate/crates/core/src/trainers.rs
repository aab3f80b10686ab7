//! Training loops sharing one harness.
//!
//! All three methods draw the same Poisson batches for a given seed (the
//! `Subsample` stream only depends on the seed and the step), so runs differ
//! only in the update rule.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_total, realized_epsilon};
use crate::error::{domain, Error, Result};
use crate::mechanism::{
    ferret_step, partition_groups, FiringStats, GroupPartition, MechanismConfig, PartitionScheme,
    UpdateLog,
};
use crate::models::{loss_and_grad, mean_loss, per_example_grads, Dataset, GradientBundle, ToyModel};
use crate::rng::{gaussian, subsample_poisson, DomainTag, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Ferret {
        mechanism: MechanismConfig,
        scheme: PartitionScheme,
    },
    /// Per-example clipping plus Gaussian noise. `noise_sigma` is a raw
    /// multiplier, not calibrated to any (epsilon, delta).
    DpsgdLite { clip: f64, noise_sigma: f64 },
    NonPrivate,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ferret { scheme, .. } => format!("ferret-{}", scheme.label()),
            Method::DpsgdLite { .. } => "dpsgd-lite".into(),
            Method::NonPrivate => "nonprivate".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerRule {
    Sgd,
    AdamLike { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerRule {
    pub fn adam() -> Self {
        OptimizerRule::AdamLike {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total number of steps `T`.
    pub steps: u64,
    /// Expected batch size `B`; the subsampling rate is `B / N`.
    pub batch: f64,
    pub lr: f64,
    pub method: Method,
    pub optimizer: OptimizerRule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn rate(&self, n: usize) -> f64 {
        self.batch / n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 {
            return domain("steps must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return domain(format!("learning rate {} must be finite and > 0", self.lr));
        }
        let s = self.rate(n);
        if !(s > 0.0 && s <= 1.0) {
            return domain(format!("subsampling rate B/N = {s} outside (0, 1]"));
        }
        match self.method {
            Method::Ferret { mechanism, .. } => mechanism.validate()?,
            Method::DpsgdLite { clip, noise_sigma } => {
                if !(clip > 0.0) {
                    return domain(format!("clip norm {clip} must be > 0"));
                }
                if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
                    return domain(format!("noise multiplier {noise_sigma} must be finite and >= 0"));
                }
            }
            Method::NonPrivate => {}
        }
        if let OptimizerRule::AdamLike { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return domain("AdamLike needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

/// Optimizer state. Both rules consume an aggregate update direction each
/// step; for the private methods that is the released delta.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub rule: OptimizerRule,
    pub lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(rule: OptimizerRule, lr: f64, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            rule,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Advance one step. AdamLike moments update on every call, including
    /// all-zero directions from silent steps.
    pub fn step(&mut self, params: &mut [Vec<f64>], direction: &[Vec<f64>]) -> Result<()> {
        if params.len() != direction.len()
            || params.iter().zip(direction).any(|(p, d)| p.len() != d.len())
        {
            return Err(Error::Shape("update direction does not match parameters".into()));
        }
        self.t += 1;
        match self.rule {
            OptimizerRule::Sgd => {
                for (p, d) in params.iter_mut().zip(direction) {
                    for (x, g) in p.iter_mut().zip(d) {
                        *x -= self.lr * g;
                    }
                }
            }
            OptimizerRule::AdamLike { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, d), m), v) in params
                    .iter_mut()
                    .zip(direction)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    for (((x, g), mi), vi) in p.iter_mut().zip(d).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub method: String,
    /// Mean training loss on the full training set after each step.
    pub loss_trace: Vec<f64>,
    /// Number of group-updates released at each step (FERRET only; zeros otherwise).
    pub fired_trace: Vec<u64>,
    pub batch_sizes: Vec<usize>,
    pub firing: Option<FiringStats>,
    pub log: Option<UpdateLog>,
    pub partition: Option<GroupPartition>,
    /// Accountant leakage of the configuration, in nats (FERRET only).
    pub epsilon: Option<f64>,
    pub rate: f64,
    pub duration: Duration,
    pub initial_loss: f64,
    pub model: ToyModel,
}

impl RunRecord {
    pub fn fired_count(&self) -> u64 {
        self.fired_trace.iter().sum()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("at least one step")
    }

    /// Leakage charged for the updates that actually fired.
    pub fn realized_epsilon(&self) -> Result<f64> {
        realized_epsilon(self.fired_count(), self.rate)
    }
}

fn batch_stream(seed: u64, step: u64) -> RngStream {
    RngStream::new(seed, DomainTag::Subsample, step, 0)
}

/// The Poisson batch a run with this seed draws at `step`.
pub fn batch_indices(n: usize, rate: f64, seed: u64, step: u64) -> Result<Vec<usize>> {
    subsample_poisson(n, rate, &batch_stream(seed, step))
}

struct Harness<'a> {
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    all: Vec<usize>,
    rate: f64,
}

impl<'a> Harness<'a> {
    fn new(model: &ToyModel, data: &'a Dataset, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate(data.len())?;
        if data.dim() != model.input_dim {
            return Err(Error::Shape(format!(
                "dataset has {} features, model expects {}",
                data.dim(),
                model.input_dim
            )));
        }
        Ok(Self {
            data,
            cfg,
            all: (0..data.len()).collect(),
            rate: cfg.rate(data.len()),
        })
    }

    /// Runs the loop; `update` maps (step, batch, model) to the aggregate
    /// direction and the number of releases at that step.
    fn run(
        &self,
        mut model: ToyModel,
        mut update: impl FnMut(u64, &[usize], &ToyModel) -> Result<(Vec<Vec<f64>>, u64)>,
    ) -> Result<(ToyModel, Vec<f64>, Vec<u64>, Vec<usize>, f64, Duration)> {
        let start = Instant::now();
        let shapes: Vec<usize> = model.tensors.iter().map(|t| t.data.len()).collect();
        let mut opt = OptimizerState::new(self.cfg.optimizer, self.cfg.lr, &shapes);
        let initial = mean_loss(&model, self.data, &self.all)?;
        let steps = self.cfg.steps as usize;
        let (mut losses, mut fired, mut sizes) =
            (Vec::with_capacity(steps), Vec::with_capacity(steps), Vec::with_capacity(steps));
        for step in 0..self.cfg.steps {
            let batch = batch_indices(self.data.len(), self.rate, self.cfg.seed, step)?;
            let (direction, k) = update(step, &batch, &model)?;
            let mut params = model.values();
            opt.step(&mut params, &direction)?;
            model.set_values(params)?;
            losses.push(mean_loss(&model, self.data, &self.all)?);
            fired.push(k);
            sizes.push(batch.len());
        }
        Ok((model, losses, fired, sizes, initial, start.elapsed()))
    }
}

fn zeros_like(model: &ToyModel) -> Vec<Vec<f64>> {
    model.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
}

/// The sign-release training loop.
///
/// Each step: Poisson batch, mean gradient, group gradients, mask/project per
/// group, then the optimizer consumes the sum of released deltas. Empty
/// batches release nothing and still count as a step.
pub fn train_ferret(model: ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    let Method::Ferret { mechanism, scheme } = cfg.method else {
        return domain("train_ferret needs a Ferret method");
    };
    let harness = Harness::new(&model, data, cfg)?;
    let partition = partition_groups(&model.shapes(), scheme)?;
    let groups = partition.num_groups();
    let epsilon = epsilon_total(groups as u64, cfg.steps, harness.rate, mechanism.p)?;
    let mut log = UpdateLog::default();
    let (model, losses, fired, sizes, initial, duration) = harness.run(model, |step, batch, m| {
        let mut agg = zeros_like(m);
        if batch.is_empty() {
            for group in 0..groups {
                log.records.push(crate::mechanism::TranscriptRecord {
                    step,
                    group,
                    fired: false,
                    sign: None,
                });
            }
            return Ok((agg, 0));
        }
        let grad = loss_and_grad(m, data, batch)?;
        let group_grads = partition.gather(&grad.grads)?;
        let updates = ferret_step(&group_grads, &partition, &mechanism, step, cfg.seed)?;
        let mut k = 0;
        for u in &updates {
            log.push(u);
            k += u64::from(u.fired);
            partition.scatter_add(&mut agg, u.group, &u.delta, 1.0)?;
        }
        Ok((agg, k))
    })?;
    Ok(RunRecord {
        method: cfg.method.label(),
        loss_trace: losses,
        fired_trace: fired,
        batch_sizes: sizes,
        firing: Some(FiringStats::from_log(&log, groups, cfg.steps, mechanism.p)),
        log: Some(log),
        partition: Some(partition),
        epsilon: Some(epsilon),
        rate: harness.rate,
        duration,
        initial_loss: initial,
        model,
    })
}

fn clip_to(g: &mut GradientBundle, clip: f64) {
    let norm = g.norm();
    if norm > clip {
        g.scale(clip / norm);
    }
}

/// Clip each per-example gradient to `clip`, average over the batch, add
/// N(0, (noise_sigma * clip / B)^2) per coordinate with `B` the expected batch.
pub fn train_dpsgd_lite(model: ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    let Method::DpsgdLite { clip, noise_sigma } = cfg.method else {
        return domain("train_dpsgd_lite needs a DpsgdLite method");
    };
    let harness = Harness::new(&model, data, cfg)?;
    let noise_sd = if noise_sigma == 0.0 { 0.0 } else { noise_sigma * clip / cfg.batch };
    let (model, losses, fired, sizes, initial, duration) = harness.run(model, |step, batch, m| {
        let mut dir = if batch.is_empty() {
            zeros_like(m)
        } else {
            let mut acc = GradientBundle::zeros_like(m);
            for mut g in per_example_grads(m, data, batch)? {
                clip_to(&mut g, clip);
                acc.add_scaled(&g, 1.0);
            }
            acc.scale(1.0 / batch.len() as f64);
            acc.grads
        };
        if noise_sd > 0.0 {
            for (t, d) in dir.iter_mut().enumerate() {
                let stream = RngStream::new(cfg.seed, DomainTag::Noise, step, t as u64);
                let noise = gaussian(noise_sd, d.len(), &stream)?;
                for (x, n) in d.iter_mut().zip(noise) {
                    *x += n;
                }
            }
        }
        Ok((dir, 0))
    })?;
    Ok(RunRecord {
        method: cfg.method.label(),
        loss_trace: losses,
        fired_trace: fired,
        batch_sizes: sizes,
        firing: None,
        log: None,
        partition: None,
        epsilon: None,
        rate: harness.rate,
        duration,
        initial_loss: initial,
        model,
    })
}

/// Plain mini-batch training on mean gradients.
pub fn train_nonprivate(model: ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    if cfg.method != Method::NonPrivate {
        return domain("train_nonprivate needs the NonPrivate method");
    }
    let harness = Harness::new(&model, data, cfg)?;
    let (model, losses, fired, sizes, initial, duration) = harness.run(model, |_, batch, m| {
        Ok((
            if batch.is_empty() {
                zeros_like(m)
            } else {
                loss_and_grad(m, data, batch)?.grads
            },
            0,
        ))
    })?;
    Ok(RunRecord {
        method: cfg.method.label(),
        loss_trace: losses,
        fired_trace: fired,
        batch_sizes: sizes,
        firing: None,
        log: None,
        partition: None,
        epsilon: None,
        rate: harness.rate,
        duration,
        initial_loss: initial,
        model,
    })
}

/// Dispatch on `cfg.method`.
pub fn train(model: ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    match cfg.method {
        Method::Ferret { .. } => train_ferret(model, data, cfg),
        Method::DpsgdLite { .. } => train_dpsgd_lite(model, data, cfg),
        Method::NonPrivate => train_nonprivate(model, data, cfg),
    }
}
