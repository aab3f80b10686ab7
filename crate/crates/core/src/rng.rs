//! Counter-keyed random streams.
//!
//! Every random draw the mechanism makes is addressed by a coordinate
//! `(seed, domain, step, group)`. The coordinate is used verbatim as the
//! 256-bit ChaCha key, so a stream is a pure value: re-deriving it anywhere,
//! on any thread, yields the same sequence, and no generator state is shared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result};

/// What a stream is used for. Distinct domains never share output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainTag {
    Mask,
    Direction,
    Dither,
    Subsample,
    Init,
    Noise,
}

impl DomainTag {
    fn code(self) -> u64 {
        match self {
            DomainTag::Mask => 1,
            DomainTag::Direction => 2,
            DomainTag::Dither => 3,
            DomainTag::Subsample => 4,
            DomainTag::Init => 5,
            DomainTag::Noise => 6,
        }
    }
}

/// Address of an independent random sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub tag: DomainTag,
    pub step: u64,
    pub group: u64,
}

impl RngStream {
    pub fn new(seed: u64, tag: DomainTag, step: u64, group: u64) -> Self {
        Self {
            seed,
            tag,
            step,
            group,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([self.seed, self.tag.code(), self.step, self.group])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// First uniform draw in `[0, 1)`.
    pub fn uniform(&self) -> f64 {
        self.rng().random::<f64>()
    }
}

/// Uniform point on the unit sphere in `dim` dimensions (Gaussian, then normalize).
pub fn sample_unit_vector(dim: usize, stream: &RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return domain("unit vector dimension must be at least 1");
    }
    let mut rng = stream.rng();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// One Bernoulli(p) draw. Uses the first uniform of the stream, so draws at
/// different `p` on the same stream are coupled: `bernoulli(p)` implies
/// `bernoulli(q)` whenever `p <= q`.
pub fn bernoulli(p: f64, stream: &RngStream) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("bernoulli probability {p} outside [0, 1]"));
    }
    Ok(stream.uniform() < p)
}

/// Poisson subsampling: each index of `0..n` kept independently with probability `s`.
pub fn subsample_poisson(n: usize, s: f64, stream: &RngStream) -> Result<Vec<usize>> {
    if n == 0 {
        return domain("dataset size must be at least 1");
    }
    if !(s > 0.0 && s <= 1.0) {
        return domain(format!("subsampling rate {s} outside (0, 1]"));
    }
    if s == 1.0 {
        return Ok((0..n).collect());
    }
    let mut rng = stream.rng();
    Ok((0..n).filter(|_| rng.random::<f64>() < s).collect())
}

/// `dim` i.i.d. draws from N(0, sigma^2). `sigma == 0` yields exact zeros.
pub fn gaussian(sigma: f64, dim: usize, stream: &RngStream) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return domain(format!("standard deviation {sigma} must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut rng = stream.rng();
    Ok((0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}
