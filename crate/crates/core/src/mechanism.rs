//! The one-bit release mechanism.
//!
//! Per step and per parameter group `g`:
//!
//! 1. draw a mask bit `Z ~ Bernoulli(p)` from the `Mask` stream;
//! 2. if it fires, draw a public direction `u` uniform on the sphere of
//!    dimension `d_g` from the `Direction` stream and release
//!    `sign(<grad_g, u>) * C * u`;
//! 3. otherwise release nothing (zeros).
//!
//! With a positive dither std-dev, data-independent Gaussian noise is added to
//! the release on both branches.
//!
//! The only data-dependent quantity is the sign, so the private payload of a
//! fired group is exactly one bit whatever `d_g` is. The mask bit, `u` and the
//! dither are all recomputable from the public seed.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{bernoulli, gaussian, sample_unit_vector, DomainTag, RngStream};

/// How parameter tensors are bucketed into groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// One tensor per group.
    Max,
    /// Consecutive buckets of `k` tensors.
    BucketOfK(usize),
    /// Exactly two groups.
    Two,
}

impl PartitionScheme {
    pub fn label(&self) -> String {
        match self {
            PartitionScheme::Max => "max".to_string(),
            PartitionScheme::BucketOfK(k) => format!("bucket{k}"),
            PartitionScheme::Two => "two".to_string(),
        }
    }
}

/// A contiguous run of scalars inside one tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub tensor_id: usize,
    pub offset: usize,
    pub length: usize,
}

/// Disjoint cover of every parameter scalar by ordered groups of spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    pub scheme: PartitionScheme,
    pub groups: Vec<Vec<Span>>,
}

/// Split `n` items into `parts` consecutive chunk sizes, earliest chunks larger.
fn chunk_sizes(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

/// Partition tensors given as `(tensor_id, length)` in order.
///
/// `Two` on a single tensor splits that tensor in two spans; uneven splits put
/// the remainder in the earlier group.
pub fn partition_groups(tensors: &[(usize, usize)], scheme: PartitionScheme) -> Result<GroupPartition> {
    if tensors.is_empty() {
        return domain("cannot partition an empty tensor list");
    }
    if let Some((id, _)) = tensors.iter().find(|(_, len)| *len == 0) {
        return domain(format!("tensor {id} has length 0"));
    }
    let mut ids: Vec<usize> = tensors.iter().map(|(id, _)| *id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return domain("tensor ids must be unique");
    }
    let whole = |&(tensor_id, length): &(usize, usize)| Span {
        tensor_id,
        offset: 0,
        length,
    };
    let groups: Vec<Vec<Span>> = match scheme {
        PartitionScheme::Max => tensors.iter().map(|t| vec![whole(t)]).collect(),
        PartitionScheme::BucketOfK(0) => return domain("bucket size k must be at least 1"),
        PartitionScheme::BucketOfK(k) => tensors
            .chunks(k)
            .map(|c| c.iter().map(whole).collect())
            .collect(),
        PartitionScheme::Two if tensors.len() == 1 => {
            let (tensor_id, length) = tensors[0];
            if length < 2 {
                return domain("two groups need at least two parameter scalars");
            }
            let head = length.div_ceil(2);
            vec![
                vec![Span {
                    tensor_id,
                    offset: 0,
                    length: head,
                }],
                vec![Span {
                    tensor_id,
                    offset: head,
                    length: length - head,
                }],
            ]
        }
        PartitionScheme::Two => {
            let sizes = chunk_sizes(tensors.len(), 2);
            let (a, b) = tensors.split_at(sizes[0]);
            vec![a.iter().map(whole).collect(), b.iter().map(whole).collect()]
        }
    };
    Ok(GroupPartition { scheme, groups })
}

impl GroupPartition {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Scalar dimension `d_g` of group `g`.
    pub fn group_dim(&self, g: usize) -> usize {
        self.groups[g].iter().map(|s| s.length).sum()
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.num_groups()).map(|g| self.group_dim(g)).collect()
    }

    fn span_slice<'a>(&self, tensors: &'a [Vec<f64>], s: &Span) -> Result<&'a [f64]> {
        tensors
            .get(s.tensor_id)
            .and_then(|t| t.get(s.offset..s.offset + s.length))
            .ok_or_else(|| Error::Shape(format!("span {s:?} does not fit the tensors")))
    }

    /// Concatenate each group's spans into one flat vector per group.
    pub fn gather(&self, tensors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.groups
            .iter()
            .map(|spans| {
                let mut flat = Vec::new();
                for s in spans {
                    flat.extend_from_slice(self.span_slice(tensors, s)?);
                }
                Ok(flat)
            })
            .collect()
    }

    /// `tensors[span] += scale * values`, scattered through group `g`'s spans.
    pub fn scatter_add(&self, tensors: &mut [Vec<f64>], g: usize, values: &[f64], scale: f64) -> Result<()> {
        let spans = self
            .groups
            .get(g)
            .ok_or_else(|| Error::Shape(format!("group {g} does not exist")))?;
        if values.len() != self.group_dim(g) {
            return Err(Error::Shape(format!(
                "group {g} has dimension {}, got {} values",
                self.group_dim(g),
                values.len()
            )));
        }
        let mut cursor = 0;
        for s in spans {
            let dst = tensors
                .get_mut(s.tensor_id)
                .and_then(|t| t.get_mut(s.offset..s.offset + s.length))
                .ok_or_else(|| Error::Shape(format!("span {s:?} does not fit the tensors")))?;
            for (d, v) in dst.iter_mut().zip(&values[cursor..cursor + s.length]) {
                *d += scale * v;
            }
            cursor += s.length;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn bit(self) -> bool {
        self == Sign::Plus
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    /// Firing probability.
    pub p: f64,
    /// Release magnitude.
    pub c: f64,
    /// Std-dev of the Gaussian dither; 0 disables it.
    #[serde(default)]
    pub dither_sigma: f64,
}

impl MechanismConfig {
    pub fn new(p: f64, c: f64, dither_sigma: f64) -> Result<Self> {
        let cfg = Self { p, c, dither_sigma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return domain(format!("firing probability {} outside [0, 1]", self.p));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return domain(format!("release magnitude C = {} must be finite and > 0", self.c));
        }
        if !(self.dither_sigma >= 0.0) || !self.dither_sigma.is_finite() {
            return domain(format!("dither std-dev {} must be finite and >= 0", self.dither_sigma));
        }
        Ok(())
    }
}

/// What one group released at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupUpdate {
    pub step: u64,
    pub group: usize,
    pub fired: bool,
    /// Present iff fired.
    pub sign: Option<Sign>,
    /// Present iff fired.
    pub direction: Option<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl GroupUpdate {
    pub fn record(&self) -> TranscriptRecord {
        TranscriptRecord {
            step: self.step,
            group: self.group,
            fired: self.fired,
            sign: self.sign,
        }
    }
}

/// `+1` when `<g, u> >= 0`, `-1` otherwise. A zero inner product resolves to `+1`.
pub fn sign_projection(g: &[f64], u: &[f64]) -> Result<Sign> {
    if g.len() != u.len() {
        return Err(Error::Shape(format!(
            "gradient has length {}, direction has length {}",
            g.len(),
            u.len()
        )));
    }
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return domain(format!("direction norm {norm} is not 1"));
    }
    let dot: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
    Ok(if dot < 0.0 { Sign::Minus } else { Sign::Plus })
}

pub fn mask_stream(seed: u64, step: u64, group: usize) -> RngStream {
    RngStream::new(seed, DomainTag::Mask, step, group as u64)
}

pub fn direction_stream(seed: u64, step: u64, group: usize) -> RngStream {
    RngStream::new(seed, DomainTag::Direction, step, group as u64)
}

pub fn dither_stream(seed: u64, step: u64, group: usize) -> RngStream {
    RngStream::new(seed, DomainTag::Dither, step, group as u64)
}

/// Whether group `group` fires at `step`.
pub fn mask_bit(p: f64, seed: u64, step: u64, group: usize) -> Result<bool> {
    bernoulli(p, &mask_stream(seed, step, group))
}

/// The public direction for `(step, group)`; independent of any data.
pub fn public_direction(dim: usize, seed: u64, step: u64, group: usize) -> Result<Vec<f64>> {
    sample_unit_vector(dim, &direction_stream(seed, step, group))
}

/// Release for a fired group with an explicit direction: `sign(<g, u>) * C * u`.
pub fn fired_update(step: u64, group: usize, grad: &[f64], direction: Vec<f64>, c: f64) -> Result<GroupUpdate> {
    let sign = sign_projection(grad, &direction)?;
    let delta = direction.iter().map(|x| sign.value() * c * x).collect();
    Ok(GroupUpdate {
        step,
        group,
        fired: true,
        sign: Some(sign),
        direction: Some(direction),
        delta,
    })
}

fn release_group(grad: &[f64], g: usize, cfg: &MechanismConfig, step: u64, seed: u64) -> Result<GroupUpdate> {
    let dim = grad.len();
    let mut update = if mask_bit(cfg.p, seed, step, g)? {
        fired_update(step, g, grad, public_direction(dim, seed, step, g)?, cfg.c)?
    } else {
        GroupUpdate {
            step,
            group: g,
            fired: false,
            sign: None,
            direction: None,
            delta: vec![0.0; dim],
        }
    };
    if cfg.dither_sigma > 0.0 {
        let noise = gaussian(cfg.dither_sigma, dim, &dither_stream(seed, step, g))?;
        for (d, n) in update.delta.iter_mut().zip(noise) {
            *d += n;
        }
    }
    Ok(update)
}

/// One step of the mechanism over every group. `gradients[g]` is the flat
/// gradient of group `g`. Groups are processed in parallel; the output is
/// identical to sequential processing.
pub fn ferret_step(
    gradients: &[Vec<f64>],
    partition: &GroupPartition,
    cfg: &MechanismConfig,
    step: u64,
    seed: u64,
) -> Result<Vec<GroupUpdate>> {
    cfg.validate()?;
    if gradients.len() != partition.num_groups() {
        return Err(Error::Shape(format!(
            "{} group gradients for {} groups",
            gradients.len(),
            partition.num_groups()
        )));
    }
    for (g, grad) in gradients.iter().enumerate() {
        if grad.len() != partition.group_dim(g) {
            return Err(Error::Shape(format!(
                "group {g} gradient has length {}, expected {}",
                grad.len(),
                partition.group_dim(g)
            )));
        }
    }
    gradients
        .par_iter()
        .enumerate()
        .map(|(g, grad)| release_group(grad, g, cfg, step, seed))
        .collect()
}

/// `params -= lr * delta` for every update, scattered through the partition.
pub fn apply_updates(
    params: &mut [Vec<f64>],
    partition: &GroupPartition,
    updates: &[GroupUpdate],
    lr: f64,
) -> Result<()> {
    for u in updates {
        partition.scatter_add(params, u.group, &u.delta, -lr)?;
    }
    Ok(())
}

/// The released transcript entry for one `(step, group)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranscriptRecord {
    pub step: u64,
    pub group: usize,
    pub fired: bool,
    pub sign: Option<Sign>,
}

/// Every release of a run, in `(step, group)` order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdateLog {
    pub records: Vec<TranscriptRecord>,
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    step: u64,
    group: usize,
    fired: u8,
    sign: i8,
}

impl UpdateLog {
    pub fn push(&mut self, update: &GroupUpdate) {
        self.records.push(update.record());
    }

    pub fn fired_count(&self) -> u64 {
        self.records.iter().filter(|r| r.fired).count() as u64
    }

    /// CSV with columns `step,group,fired,sign`; `sign` is `1`, `-1`, or `0` when silent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            wtr.serialize(CsvRecord {
                step: r.step,
                group: r.group,
                fired: u8::from(r.fired),
                sign: r.sign.map_or(0, |s| s.value() as i8),
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRecord = row?;
            let sign = match (row.fired, row.sign) {
                (0, 0) => None,
                (1, 1) => Some(Sign::Plus),
                (1, -1) => Some(Sign::Minus),
                (f, s) => return domain(format!("invalid transcript row fired={f} sign={s}")),
            };
            records.push(TranscriptRecord {
                step: row.step,
                group: row.group,
                fired: row.fired == 1,
                sign,
            });
        }
        Ok(Self { records })
    }

    /// The private part of the transcript: one bit per fired record, packed MSB-first.
    pub fn private_payload(&self) -> SignPayload {
        SignPayload::pack(self.records.iter().filter_map(|r| r.sign))
    }
}

/// Packed sign bits.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SignPayload {
    pub bytes: Vec<u8>,
    pub bit_len: usize,
}

impl SignPayload {
    pub fn pack(signs: impl IntoIterator<Item = Sign>) -> Self {
        let mut out = Self::default();
        for s in signs {
            if out.bit_len % 8 == 0 {
                out.bytes.push(0);
            }
            if s.bit() {
                *out.bytes.last_mut().unwrap() |= 0x80 >> (out.bit_len % 8);
            }
            out.bit_len += 1;
        }
        out
    }

    pub fn unpack(&self) -> Vec<Sign> {
        (0..self.bit_len)
            .map(|i| Sign::from_bit(self.bytes[i / 8] & (0x80 >> (i % 8)) != 0))
            .collect()
    }
}

/// Private payload of a single release.
pub fn update_payload(update: &GroupUpdate) -> SignPayload {
    SignPayload::pack(update.sign)
}

/// Rebuild a released delta from its transcript record and the public seed.
pub fn reconstruct_delta(
    record: &TranscriptRecord,
    partition: &GroupPartition,
    cfg: &MechanismConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let dim = partition.group_dim(record.group);
    let mut delta = match record.sign {
        Some(sign) if record.fired => public_direction(dim, seed, record.step, record.group)?
            .into_iter()
            .map(|x| sign.value() * cfg.c * x)
            .collect(),
        _ => vec![0.0; dim],
    };
    if cfg.dither_sigma > 0.0 {
        let noise = gaussian(cfg.dither_sigma, dim, &dither_stream(seed, record.step, record.group))?;
        for (d, n) in delta.iter_mut().zip(noise) {
            *d += n;
        }
    }
    Ok(delta)
}

/// Per-group fire counts `K_g` over `steps` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FiringStats {
    pub counts: Vec<u64>,
    pub steps: u64,
    pub p: f64,
}

impl FiringStats {
    pub fn from_log(log: &UpdateLog, groups: usize, steps: u64, p: f64) -> Self {
        let mut counts = vec![0; groups];
        for r in log.records.iter().filter(|r| r.fired) {
            counts[r.group] += 1;
        }
        Self { counts, steps, p }
    }

    /// Mask draws alone, as the mechanism would make them over `steps` steps.
    pub fn simulate(groups: usize, steps: u64, p: f64, seed: u64) -> Result<Self> {
        let mut counts = vec![0; groups];
        for step in 0..steps {
            for (g, k) in counts.iter_mut().enumerate() {
                *k += u64::from(mask_bit(p, seed, step, g)?);
            }
        }
        Ok(Self { counts, steps, p })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, i + 1)).collect()
    }

    fn group_sizes(p: &GroupPartition) -> Vec<usize> {
        p.groups.iter().map(Vec::len).collect()
    }

    #[test]
    fn partition_schemes() {
        let max = partition_groups(&shapes(5), PartitionScheme::Max).unwrap();
        assert_eq!(group_sizes(&max), vec![1; 5]);
        let two = partition_groups(&shapes(5), PartitionScheme::Two).unwrap();
        assert_eq!(group_sizes(&two), vec![3, 2]);
        let b8 = partition_groups(&shapes(17), PartitionScheme::BucketOfK(8)).unwrap();
        assert_eq!(group_sizes(&b8), vec![8, 8, 1]);
        assert_eq!(b8.group_dim(2), 17);
    }

    #[test]
    fn partition_errors() {
        assert!(partition_groups(&[], PartitionScheme::Max).is_err());
        assert!(partition_groups(&shapes(3), PartitionScheme::BucketOfK(0)).is_err());
        assert!(partition_groups(&[(0, 3), (1, 0)], PartitionScheme::Max).is_err());
        assert!(partition_groups(&[(0, 3), (0, 2)], PartitionScheme::Max).is_err());
        assert!(partition_groups(&[(0, 1)], PartitionScheme::Two).is_err());
    }

    #[test]
    fn two_groups_from_one_tensor() {
        let p = partition_groups(&[(0, 5)], PartitionScheme::Two).unwrap();
        assert_eq!(p.dims(), vec![3, 2]);
        let g = p.gather(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(g, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]]);
    }

    #[test]
    fn sign_projection_cases() {
        assert_eq!(sign_projection(&[3.0, 0.0], &[1.0, 0.0]).unwrap(), Sign::Plus);
        assert_eq!(sign_projection(&[3.0, 0.0], &[0.0, 1.0]).unwrap(), Sign::Plus);
        assert_eq!(sign_projection(&[-3.0, 0.0], &[1.0, 0.0]).unwrap(), Sign::Minus);
        assert!(matches!(sign_projection(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
        assert!(sign_projection(&[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sign_is_balanced_over_fresh_directions() {
        let g = [1.0, 2.0, -1.0];
        let n = 100_000u64;
        let plus = (0..n)
            .filter(|&t| {
                let u = public_direction(3, 11, t, 0).unwrap();
                sign_projection(&g, &u).unwrap() == Sign::Plus
            })
            .count();
        let rate = plus as f64 / n as f64;
        assert!((rate - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{rate}");
    }

    #[test]
    fn silent_when_p_zero() {
        let part = partition_groups(&shapes(4), PartitionScheme::Max).unwrap();
        let grads: Vec<Vec<f64>> = part.dims().iter().map(|&d| vec![1.0; d]).collect();
        let cfg = MechanismConfig::new(0.0, 1.0, 0.0).unwrap();
        for step in 0..50 {
            for u in ferret_step(&grads, &part, &cfg, step, 3).unwrap() {
                assert!(!u.fired && u.sign.is_none() && u.direction.is_none());
                assert!(u.delta.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn forced_direction_path() {
        let u = fired_update(0, 0, &[2.0, 0.0], vec![1.0, 0.0], 1.0).unwrap();
        assert_eq!(u.delta, vec![1.0, 0.0]);
        assert_eq!(u.sign, Some(Sign::Plus));
    }

    #[test]
    fn fired_release_alphabet() {
        let part = partition_groups(&[(0, 6), (1, 3)], PartitionScheme::Max).unwrap();
        let grads = vec![vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0], vec![0.0; 3]];
        let cfg = MechanismConfig::new(0.5, 0.7, 0.0).unwrap();
        for step in 0..200 {
            for up in ferret_step(&grads, &part, &cfg, step, 9).unwrap() {
                if up.fired {
                    let u = up.direction.as_ref().unwrap();
                    let s = up.sign.unwrap().value();
                    for (d, x) in up.delta.iter().zip(u) {
                        assert_eq!(*d, s * 0.7 * x);
                    }
                    if up.group == 1 {
                        assert_eq!(up.sign, Some(Sign::Plus), "zero gradient releases +1");
                    }
                } else {
                    assert!(up.delta.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn dither_on_both_branches() {
        let part = partition_groups(&[(0, 16)], PartitionScheme::Max).unwrap();
        let grads = vec![vec![1.0; 16]];
        let sd = 1e-3;
        let cfg = MechanismConfig::new(0.5, 1.0, sd).unwrap();
        let (mut silent_nonzero, mut fired) = (0, 0);
        for step in 0..100 {
            let up = &ferret_step(&grads, &part, &cfg, step, 1).unwrap()[0];
            if up.fired {
                fired += 1;
                let s = up.sign.unwrap().value();
                let resid: f64 = up
                    .delta
                    .iter()
                    .zip(up.direction.as_ref().unwrap())
                    .map(|(d, u)| (d - s * u).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(resid <= 10.0 * sd * 4.0);
            } else if up.delta.iter().any(|&x| x != 0.0) {
                silent_nonzero += 1;
            }
        }
        assert!(fired > 0);
        assert_eq!(silent_nonzero, 100 - fired);
    }

    #[test]
    fn step_shape_errors() {
        let part = partition_groups(&shapes(2), PartitionScheme::Max).unwrap();
        let cfg = MechanismConfig::new(1.0, 1.0, 0.0).unwrap();
        assert!(ferret_step(&[vec![1.0]], &part, &cfg, 0, 0).is_err());
        assert!(ferret_step(&[vec![1.0], vec![1.0]], &part, &cfg, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MechanismConfig::new(1.2, 1.0, 0.0).is_err());
        assert!(MechanismConfig::new(0.5, 0.0, 0.0).is_err());
        assert!(MechanismConfig::new(0.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn apply_single_and_pair() {
        let part = partition_groups(&[(0, 2), (1, 3)], PartitionScheme::Max).unwrap();
        let mut params = vec![vec![0.0, 0.0], vec![1.0, 1.0, 1.0]];
        let silent = GroupUpdate {
            step: 0,
            group: 0,
            fired: false,
            sign: None,
            direction: None,
            delta: vec![0.0; 2],
        };
        apply_updates(&mut params, &part, &[silent], 1.0).unwrap();
        assert_eq!(params, vec![vec![0.0, 0.0], vec![1.0, 1.0, 1.0]]);

        let minus = fired_update(0, 1, &[-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], 1.0).unwrap();
        apply_updates(&mut params, &part, &[minus], 1.0).unwrap();
        assert_eq!(params[1], vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn payload_roundtrip() {
        let signs = [Sign::Plus, Sign::Minus, Sign::Minus, Sign::Plus, Sign::Plus, Sign::Minus, Sign::Plus, Sign::Plus, Sign::Minus];
        let p = SignPayload::pack(signs);
        assert_eq!(p.bit_len, 9);
        assert_eq!(p.bytes.len(), 2);
        assert_eq!(p.unpack(), signs.to_vec());
    }

    #[test]
    fn transcript_csv_and_reconstruction() {
        let part = partition_groups(&[(0, 4), (1, 2), (2, 3)], PartitionScheme::Max).unwrap();
        let grads = vec![vec![1.0, -2.0, 0.5, 0.1], vec![-1.0, 1.0], vec![0.3, 0.3, -0.9]];
        let cfg = MechanismConfig::new(0.6, 0.5, 0.0).unwrap();
        let mut log = UpdateLog::default();
        let mut deltas = Vec::new();
        for step in 0..30 {
            for up in ferret_step(&grads, &part, &cfg, step, 5).unwrap() {
                log.push(&up);
                deltas.push(up.delta);
            }
        }
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,group,fired,sign\n"));
        let back = UpdateLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        for (r, d) in back.records.iter().zip(&deltas) {
            assert_eq!(&reconstruct_delta(r, &part, &cfg, 5).unwrap(), d);
        }
        assert_eq!(log.private_payload().bit_len as u64, log.fired_count());
    }

    #[test]
    fn firing_stats_total() {
        let stats = FiringStats::simulate(8, 1000, 0.05, 17).unwrap();
        let mean = 400.0;
        let sd = (8000.0f64 * 0.05 * 0.95).sqrt();
        // 99% two-sided normal quantile
        assert!((stats.total() as f64 - mean).abs() < 2.576 * sd, "{}", stats.total());
        assert!(stats.counts.iter().all(|&k| k <= 1000));
    }
}
