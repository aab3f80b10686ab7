//! Small differentiable tasks with exact gradients.
//!
//! Losses use the half-MSE convention for regression (`0.5 * (f(x) - y)^2`)
//! and the Bernoulli negative log-likelihood on logits for the two
//! classifiers. The MLP has one `tanh` hidden layer and a single logit output.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{DomainTag, RngStream};

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp { hidden: usize },
}

impl ModelKind {
    pub fn is_classifier(self) -> bool {
        !matches!(self, ModelKind::LinearRegression)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Whether the output layer of a linear/logistic model has a bias term.
    /// The MLP always has biases.
    pub bias: bool,
    pub tensors: Vec<Tensor>,
}

fn layout(kind: ModelKind, d: usize, bias: bool) -> Vec<(&'static str, usize)> {
    match kind {
        ModelKind::LinearRegression | ModelKind::LogisticRegression => {
            let mut t = vec![("weight", d)];
            if bias {
                t.push(("bias", 1));
            }
            t
        }
        ModelKind::Mlp { hidden } => vec![
            ("hidden.weight", hidden * d),
            ("hidden.bias", hidden),
            ("output.weight", hidden),
            ("output.bias", 1),
        ],
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ToyModel {
    /// All-zero parameters.
    pub fn zeros(kind: ModelKind, input_dim: usize, bias: bool) -> Result<Self> {
        if input_dim == 0 {
            return domain("input dimension must be at least 1");
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return domain("MLP hidden width must be at least 1");
        }
        Ok(Self {
            kind,
            input_dim,
            bias: bias || matches!(kind, ModelKind::Mlp { .. }),
            tensors: layout(kind, input_dim, bias)
                .into_iter()
                .map(|(name, len)| Tensor {
                    name: name.to_string(),
                    data: vec![0.0; len],
                })
                .collect(),
        })
    }

    /// Weights drawn from N(0, 1/fan_in) on the `Init` stream, biases zero.
    pub fn init(kind: ModelKind, input_dim: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(kind, input_dim, true)?;
        let mut rng = RngStream::new(seed, DomainTag::Init, 0, 0).rng();
        let hidden = match kind {
            ModelKind::Mlp { hidden } => hidden,
            _ => 0,
        };
        for t in &mut model.tensors {
            let fan_in = match t.name.as_str() {
                "weight" | "hidden.weight" => input_dim,
                "output.weight" => hidden,
                _ => continue,
            };
            let scale = 1.0 / (fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(model)
    }

    /// Replace the parameter values, checking shapes.
    pub fn with_values(mut self, values: Vec<Vec<f64>>) -> Result<Self> {
        self.set_values(values)?;
        Ok(self)
    }

    pub fn set_values(&mut self, values: Vec<Vec<f64>>) -> Result<()> {
        if values.len() != self.tensors.len()
            || values.iter().zip(&self.tensors).any(|(v, t)| v.len() != t.data.len())
        {
            return Err(Error::Shape("parameter values do not match the model layout".into()));
        }
        for (t, v) in self.tensors.iter_mut().zip(values) {
            t.data = v;
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data.clone()).collect()
    }

    /// `(tensor_id, length)` pairs, the input to partitioning.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().enumerate().map(|(i, t)| (i, t.data.len())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Raw output: prediction for regression, logit for classifiers.
    pub fn forward(&self, x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                let b = if self.bias { self.tensors[1].data[0] } else { 0.0 };
                dot(&self.tensors[0].data, x) + b
            }
            ModelKind::Mlp { hidden } => {
                let a = self.hidden_activations(x, hidden);
                dot(&self.tensors[2].data, &a) + self.tensors[3].data[0]
            }
        }
    }

    fn hidden_activations(&self, x: &[f64], hidden: usize) -> Vec<f64> {
        let w = &self.tensors[0].data;
        let b = &self.tensors[1].data;
        (0..hidden)
            .map(|j| (dot(&w[j * self.input_dim..(j + 1) * self.input_dim], x) + b[j]).tanh())
            .collect()
    }

    pub fn example_loss(&self, x: &[f64], y: f64) -> f64 {
        let z = self.forward(x);
        match self.kind {
            ModelKind::LinearRegression => 0.5 * (z - y).powi(2),
            _ => softplus(z) - y * z,
        }
    }

    /// Loss and gradient of one example.
    pub fn example_grad(&self, x: &[f64], y: f64) -> GradientBundle {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                let z = self.forward(x);
                let (loss, r) = if self.kind == ModelKind::LinearRegression {
                    (0.5 * (z - y).powi(2), z - y)
                } else {
                    (softplus(z) - y * z, sigmoid(z) - y)
                };
                let mut grads = vec![x.iter().map(|v| r * v).collect::<Vec<_>>()];
                if self.bias {
                    grads.push(vec![r]);
                }
                GradientBundle { grads, loss }
            }
            ModelKind::Mlp { hidden } => {
                let a = self.hidden_activations(x, hidden);
                let w2 = &self.tensors[2].data;
                let z = dot(w2, &a) + self.tensors[3].data[0];
                let r = sigmoid(z) - y;
                let delta: Vec<f64> = (0..hidden).map(|j| r * w2[j] * (1.0 - a[j] * a[j])).collect();
                let mut gw1 = Vec::with_capacity(hidden * self.input_dim);
                for dj in &delta {
                    gw1.extend(x.iter().map(|xk| dj * xk));
                }
                GradientBundle {
                    grads: vec![gw1, delta, a.iter().map(|aj| r * aj).collect(), vec![r]],
                    loss: softplus(z) - y * z,
                }
            }
        }
    }

    fn check_input(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "dataset has {} features, model expects {}",
                data.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// Per-tensor gradients aligned with [`ToyModel::tensors`], and the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub grads: Vec<Vec<f64>>,
    pub loss: f64,
}

impl GradientBundle {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            grads: model.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            loss: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        self.loss += scale * other.loss;
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flatten().for_each(|x| *x *= factor);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Member,
    NonMember,
}

impl SplitTag {
    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Member => "member",
            SplitTag::NonMember => "nonmember",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, split: SplitTag) -> Result<Self> {
        if features.is_empty() {
            return domain("dataset must have at least one record");
        }
        if features.len() != targets.len() {
            return Err(Error::Shape("features and targets differ in length".into()));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("ragged or empty feature rows".into()));
        }
        Ok(Self {
            features,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// CSV with columns `x0..x{d-1},target,split_tag`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("target".into());
        header.push("split_tag".into());
        wtr.write_record(&header)?;
        for (x, y) in self.features.iter().zip(&self.targets) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            row.push(self.split.as_str().into());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let ncols = rdr.headers()?.len();
        if ncols < 3 {
            return domain("dataset CSV needs at least one feature, target and split_tag");
        }
        let bad = |msg: String| Error::Parse {
            path: "<dataset>".into(),
            msg,
        };
        let (mut features, mut targets, mut split) = (Vec::new(), Vec::new(), None);
        for row in rdr.records() {
            let row = row?;
            let nums: Vec<f64> = row
                .iter()
                .take(ncols - 1)
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            let tag = match &row[ncols - 1] {
                "member" => SplitTag::Member,
                "nonmember" => SplitTag::NonMember,
                other => return Err(bad(format!("unknown split tag {other:?}"))),
            };
            if split.is_some_and(|s| s != tag) {
                return Err(bad("mixed split tags in one file".into()));
            }
            split = Some(tag);
            targets.push(nums[ncols - 2]);
            features.push(nums[..ncols - 2].to_vec());
        }
        Dataset::new(features, targets, split.unwrap_or(SplitTag::Member))
    }
}

/// The ground-truth model `synth_dataset` labels with.
pub fn teacher_model(kind: ModelKind, d: usize, seed: u64) -> Result<ToyModel> {
    let mut model = ToyModel::zeros(kind, d, true)?;
    let mut rng = RngStream::new(seed, DomainTag::Init, u64::MAX, 0).rng();
    let gain = if kind.is_classifier() { 2.0 } else { 1.0 };
    let hidden = match kind {
        ModelKind::Mlp { hidden } => hidden,
        _ => 1,
    };
    for t in &mut model.tensors {
        let fan_in = match t.name.as_str() {
            "weight" | "hidden.weight" => d,
            "output.weight" => hidden,
            _ => 1,
        } as f64;
        for v in &mut t.data {
            *v = gain * rng.sample::<f64, _>(StandardNormal) / fan_in.sqrt();
        }
    }
    Ok(model)
}

/// Two i.i.d. splits of `n` records each, labelled by [`teacher_model`].
///
/// Features are standard normal. Regression targets are the teacher output
/// plus N(0, noise_sigma^2); classification labels are `1[logit + noise > 0]`.
pub fn synth_dataset(kind: ModelKind, n: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if n == 0 || d == 0 {
        return domain("dataset size and dimension must be at least 1");
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return domain(format!("noise std-dev {noise_sigma} must be finite and >= 0"));
    }
    let teacher = teacher_model(kind, d, seed)?;
    let split = |tag: SplitTag, step: u64| -> Result<Dataset> {
        let mut xr = RngStream::new(seed, DomainTag::Init, step, 1).rng();
        let mut nr = RngStream::new(seed, DomainTag::Noise, step, 1).rng();
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| xr.sample(StandardNormal)).collect();
            let noise = noise_sigma * nr.sample::<f64, _>(StandardNormal);
            let z = teacher.forward(&x) + noise;
            targets.push(if kind.is_classifier() { f64::from(u8::from(z > 0.0)) } else { z });
            features.push(x);
        }
        Dataset::new(features, targets, tag)
    };
    Ok((split(SplitTag::Member, 1)?, split(SplitTag::NonMember, 2)?))
}

fn check_batch(data: &Dataset, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return domain("batch must not be empty");
    }
    if let Some(i) = idx.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Shape(format!("index {i} out of range for {} records", data.len())));
    }
    Ok(())
}

const PARALLEL_BATCH: usize = 256;

/// One gradient bundle per record of the batch.
pub fn per_example_grads(model: &ToyModel, data: &Dataset, idx: &[usize]) -> Result<Vec<GradientBundle>> {
    model.check_input(data)?;
    check_batch(data, idx)?;
    let one = |&i: &usize| model.example_grad(&data.features[i], data.targets[i]);
    Ok(if idx.len() >= PARALLEL_BATCH {
        idx.par_iter().map(one).collect()
    } else {
        idx.iter().map(one).collect()
    })
}

/// Mean loss and mean gradient over the batch. Per-example terms are summed
/// in batch order, so the parallel and sequential paths agree exactly.
pub fn loss_and_grad(model: &ToyModel, data: &Dataset, idx: &[usize]) -> Result<GradientBundle> {
    let per = per_example_grads(model, data, idx)?;
    let mut acc = GradientBundle::zeros_like(model);
    for g in &per {
        acc.add_scaled(g, 1.0);
    }
    acc.scale(1.0 / idx.len() as f64);
    acc.loss /= idx.len() as f64;
    Ok(acc)
}

pub fn mean_loss(model: &ToyModel, data: &Dataset, idx: &[usize]) -> Result<f64> {
    model.check_input(data)?;
    check_batch(data, idx)?;
    Ok(idx
        .iter()
        .map(|&i| model.example_loss(&data.features[i], data.targets[i]))
        .sum::<f64>()
        / idx.len() as f64)
}

/// Central-difference gradient of the mean batch loss, one parameter at a time.
pub fn finite_diff_grad(model: &ToyModel, data: &Dataset, idx: &[usize], h: f64) -> Result<GradientBundle> {
    if !(h > 0.0) {
        return domain(format!("step size {h} must be > 0"));
    }
    let loss = mean_loss(model, data, idx)?;
    let mut probe = model.clone();
    let mut grads = Vec::with_capacity(model.tensors.len());
    for t in 0..model.tensors.len() {
        let mut g = Vec::with_capacity(model.tensors[t].data.len());
        for k in 0..model.tensors[t].data.len() {
            let orig = probe.tensors[t].data[k];
            probe.tensors[t].data[k] = orig + h;
            let up = mean_loss(&probe, data, idx)?;
            probe.tensors[t].data[k] = orig - h;
            let down = mean_loss(&probe, data, idx)?;
            probe.tensors[t].data[k] = orig;
            g.push((up - down) / (2.0 * h));
        }
        grads.push(g);
    }
    Ok(GradientBundle { grads, loss })
}

/// Utility metrics on a whole dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Mean squared error (full, not halved); regression only.
    pub mse: Option<f64>,
    /// Mean negative log-likelihood in nats; classifiers only.
    pub nll: Option<f64>,
    /// `exp(nll)`; classifiers only.
    pub perplexity_analog: Option<f64>,
}

impl Metrics {
    /// The headline number: MSE for regression, NLL otherwise.
    pub fn primary(&self) -> f64 {
        self.mse.or(self.nll).unwrap_or(f64::NAN)
    }
}

pub fn eval_metrics(model: &ToyModel, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return domain("cannot evaluate on an empty dataset");
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mean = mean_loss(model, data, &all)?;
    Ok(if model.kind.is_classifier() {
        Metrics {
            mse: None,
            nll: Some(mean),
            perplexity_analog: Some(mean.exp()),
        }
    } else {
        Metrics {
            mse: Some(2.0 * mean),
            nll: None,
            perplexity_analog: None,
        }
    })
}
