//! Closed-form mutual-information privacy accounting.
//!
//! A fired group releases one sign bit, worth at most `ln 2` nats. Poisson
//! subsampling at rate `s` scales the per-record leakage by `s`, and leakage
//! composes additively over `G` groups and `T` steps:
//!
//! ```text
//! epsilon(p)  = G * T * s * p * ln 2
//! epsilon_max = G * T * s * ln 2          (p = 1)
//! p*          = epsilon / epsilon_max
//! ```
//!
//! All budgets are in nats. [`nats_to_bits`] and [`bits_to_nats`] convert
//! for display.
//!
//! The dithered variant additionally admits a Renyi-DP bound, see
//! [`rdp_dither_bound`].

use std::f64::consts::LN_2;

use crate::error::{domain, Error, Result};

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * LN_2
}

/// Static shape of a private training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccountantConfig {
    /// Number of parameter groups.
    pub groups: u64,
    /// Number of steps.
    pub steps: u64,
    /// Poisson subsampling rate, `B / N`.
    pub rate: f64,
    /// Target budget in nats.
    pub epsilon_target: f64,
}

impl AccountantConfig {
    pub fn new(groups: u64, steps: u64, rate: f64, epsilon_target: f64) -> Result<Self> {
        check_shape(groups, steps, rate)?;
        if !(epsilon_target > 0.0) {
            return domain(format!("epsilon target {epsilon_target} must be > 0"));
        }
        Ok(Self {
            groups,
            steps,
            rate,
            epsilon_target,
        })
    }

    /// Build from an expected batch size and a dataset size (`s = B / N`).
    pub fn from_batching(
        groups: u64,
        steps: u64,
        batch: f64,
        dataset: u64,
        epsilon_target: f64,
    ) -> Result<Self> {
        if dataset == 0 {
            return domain("dataset size must be at least 1");
        }
        Self::new(groups, steps, batch / dataset as f64, epsilon_target)
    }

    pub fn plan(&self) -> Result<PrivacyPlan> {
        let p_star = optimal_p(self.epsilon_target, self.groups, self.steps, self.rate)?;
        Ok(PrivacyPlan {
            p_star,
            epsilon_max: epsilon_max(self.groups, self.steps, self.rate)?,
            epsilon_achieved: epsilon_total(self.groups, self.steps, self.rate, p_star)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyPlan {
    pub p_star: f64,
    pub epsilon_max: f64,
    pub epsilon_achieved: f64,
}

fn check_shape(groups: u64, steps: u64, rate: f64) -> Result<()> {
    if groups == 0 {
        return domain("number of groups must be at least 1");
    }
    if steps == 0 {
        return domain("number of steps must be at least 1");
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return domain(format!("subsampling rate {rate} outside (0, 1]"));
    }
    Ok(())
}

/// Total leakage `G * T * s * p * ln 2` in nats.
pub fn epsilon_total(groups: u64, steps: u64, rate: f64, p: f64) -> Result<f64> {
    check_shape(groups, steps, rate)?;
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("firing probability {p} outside [0, 1]"));
    }
    Ok(groups as f64 * steps as f64 * rate * p * LN_2)
}

/// Head-room: the leakage reached when every group fires every step.
pub fn epsilon_max(groups: u64, steps: u64, rate: f64) -> Result<f64> {
    epsilon_total(groups, steps, rate, 1.0)
}

/// The largest firing probability meeting `epsilon`.
///
/// Fails with [`Error::BudgetInfeasible`] when `epsilon >= epsilon_max`; the
/// probability is never clamped to 1.
pub fn optimal_p(epsilon: f64, groups: u64, steps: u64, rate: f64) -> Result<f64> {
    let ceiling = epsilon_max(groups, steps, rate)?;
    if !(epsilon > 0.0) {
        return domain(format!("epsilon {epsilon} must be > 0"));
    }
    if epsilon >= ceiling {
        return Err(Error::BudgetInfeasible {
            epsilon,
            epsilon_max: ceiling,
        });
    }
    Ok(epsilon / (groups as f64 * steps as f64 * rate * LN_2))
}

/// Per-release leakage after Poisson subsampling at rate `s`: `s * epsilon_0`.
pub fn amplified_epsilon(epsilon_0: f64, rate: f64) -> Result<f64> {
    if !(epsilon_0 >= 0.0) {
        return domain(format!("epsilon_0 {epsilon_0} must be >= 0"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return domain(format!("subsampling rate {rate} outside (0, 1]"));
    }
    Ok(rate * epsilon_0)
}

/// Leakage charged for a realized number of fired group-updates.
pub fn realized_epsilon(fired: u64, rate: f64) -> Result<f64> {
    Ok(fired as f64 * amplified_epsilon(LN_2, rate)?)
}

/// Query for the Renyi bound of the dithered mechanism.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DitherRdpQuery {
    pub alpha: f64,
    pub p: f64,
    pub c: f64,
    pub sigma_d: f64,
}

impl DitherRdpQuery {
    pub fn new(alpha: f64, p: f64, c: f64, sigma_d: f64) -> Result<Self> {
        let q = Self {
            alpha,
            p,
            c,
            sigma_d,
        };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return domain(format!("Renyi order {} must be finite and > 1", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return domain(format!("firing probability {} outside [0, 1]", self.p));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return domain(format!("release magnitude {} must be finite and > 0", self.c));
        }
        if !(self.sigma_d > 0.0) || !self.sigma_d.is_finite() {
            return domain(format!(
                "dither std-dev {} must be finite and > 0",
                self.sigma_d
            ));
        }
        Ok(())
    }
}

/// A non-negative bound stored as its natural logarithm.
///
/// The exponential factor overflows `f64` long before the bound itself stops
/// being a real number (`C / sigma_d` of a few hundred suffices), so the bound
/// is carried in log space. `ln_value` is `-inf` for a zero bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdpBound {
    pub ln_value: f64,
}

impl RdpBound {
    /// The bound in nats; `+inf` only if it exceeds `f64::MAX`.
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }

    pub fn is_zero(&self) -> bool {
        self.ln_value == f64::NEG_INFINITY
    }
}

/// Renyi divergence bound for the mechanism with Gaussian dither on both branches:
///
/// ```text
/// p^a / (a - 1) * exp(2 a (a - 1) C^2 / sigma_d^2)  +  p^a / (a - 1)
/// ```
pub fn rdp_dither_bound(q: &DitherRdpQuery) -> Result<RdpBound> {
    q.validate()?;
    if q.p == 0.0 {
        return Ok(RdpBound {
            ln_value: f64::NEG_INFINITY,
        });
    }
    let a = q.alpha;
    let ln_prefactor = a * q.p.ln() - (a - 1.0).ln();
    let exponent = 2.0 * a * (a - 1.0) * (q.c / q.sigma_d).powi(2);
    // ln(e^x + 1) without overflow
    let ln_sum = if exponent > 36.0 {
        exponent + (-exponent).exp().ln_1p()
    } else {
        exponent.exp().ln_1p()
    };
    Ok(RdpBound {
        ln_value: ln_prefactor + ln_sum,
    })
}

/// Evaluate the bound at each order and return the minimizing `(alpha, bound)`.
///
/// Ties keep the earliest order in the list.
pub fn rdp_order_sweep(p: f64, c: f64, sigma_d: f64, orders: &[f64]) -> Result<(f64, RdpBound)> {
    if orders.is_empty() {
        return domain("order list must not be empty");
    }
    let mut best: Option<(f64, RdpBound)> = None;
    for &alpha in orders {
        let bound = rdp_dither_bound(&DitherRdpQuery::new(alpha, p, c, sigma_d)?)?;
        if best.is_none_or(|(_, b)| bound.ln_value < b.ln_value) {
            best = Some((alpha, bound));
        }
    }
    Ok(best.expect("non-empty order list"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_probability_leaks_nothing() {
        assert_eq!(epsilon_total(2, 1000, 0.005, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn headroom_values() {
        assert!((epsilon_total(2, 1000, 0.005, 0.072).unwrap() - 0.4990).abs() < 1e-3);
        assert!((epsilon_total(200, 1000, 0.005, 1.0).unwrap() - 693.1).abs() < 0.1);
        assert!((epsilon_max(2, 1000, 0.005).unwrap() - 6.93).abs() < 0.01);
        assert_eq!(epsilon_max(1, 1, 1.0).unwrap(), LN_2);
        assert!((epsilon_max(50, 1000, 0.005).unwrap() - 173.0).abs() < 0.5);
    }

    #[test]
    fn optimal_p_values() {
        assert!((optimal_p(0.5, 2, 1000, 0.005).unwrap() - 0.0722).abs() < 1e-4);
        assert!(rel(optimal_p(0.5, 200, 1000, 0.005).unwrap(), 7.2e-4) < 0.05);
        for (g, t, s) in [(1, 1, 1.0), (8, 300, 0.02), (200, 1000, 0.005)] {
            let half = epsilon_max(g, t, s).unwrap() / 2.0;
            assert!(rel(optimal_p(half, g, t, s).unwrap(), 0.5) < 1e-15);
        }
    }

    #[test]
    fn infeasible_and_invalid_budgets() {
        let ceiling = epsilon_max(2, 1000, 0.005).unwrap();
        assert!(matches!(
            optimal_p(10.0, 2, 1000, 0.005),
            Err(Error::BudgetInfeasible { .. })
        ));
        assert!(matches!(
            optimal_p(ceiling, 2, 1000, 0.005),
            Err(Error::BudgetInfeasible { .. })
        ));
        assert!(matches!(optimal_p(0.0, 2, 1000, 0.005), Err(Error::Domain(_))));
        assert!(matches!(optimal_p(-1.0, 2, 1000, 0.005), Err(Error::Domain(_))));
        assert!(epsilon_total(0, 1, 1.0, 0.5).is_err());
        assert!(epsilon_total(1, 0, 1.0, 0.5).is_err());
        assert!(epsilon_total(1, 1, 0.0, 0.5).is_err());
        assert!(epsilon_total(1, 1, 1.0, 1.5).is_err());
    }

    #[test]
    fn amplification() {
        assert_eq!(amplified_epsilon(0.7, 1.0).unwrap(), 0.7);
        assert_eq!(amplified_epsilon(0.0, 0.3).unwrap(), 0.0);
        assert!((amplified_epsilon(LN_2, 0.005).unwrap() - 0.003466).abs() < 1e-6);
        assert!(amplified_epsilon(-1.0, 0.5).is_err());
        assert!(amplified_epsilon(1.0, 0.0).is_err());
    }

    #[test]
    fn plan_round_trips() {
        let plan = AccountantConfig::from_batching(2, 1000, 5.0, 1000, 0.5)
            .unwrap()
            .plan()
            .unwrap();
        assert!(rel(plan.epsilon_achieved, 0.5) < 1e-12);
        assert!(plan.p_star > 0.0 && plan.p_star < 1.0);
    }

    #[test]
    fn nats_bits() {
        assert!((nats_to_bits(LN_2) - 1.0).abs() < 1e-15);
        assert!((bits_to_nats(nats_to_bits(0.37)) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn rdp_bound_examples() {
        let zero = rdp_dither_bound(&DitherRdpQuery::new(3.0, 0.0, 1.0, 0.5).unwrap()).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.value(), 0.0);

        let b = rdp_dither_bound(&DitherRdpQuery::new(2.0, 0.1, 1.0, 2.0).unwrap()).unwrap();
        assert!((b.value() - 0.037183).abs() < 1e-6);

        let mut prev = f64::INFINITY;
        for k in 0..12 {
            let sd = 0.01 * 2f64.powi(k);
            let v = rdp_dither_bound(&DitherRdpQuery::new(2.0, 0.3, 1.0, sd).unwrap())
                .unwrap()
                .ln_value;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn rdp_bound_domain() {
        assert!(DitherRdpQuery::new(1.0, 0.1, 1.0, 1.0).is_err());
        assert!(DitherRdpQuery::new(2.0, 0.1, 1.0, 0.0).is_err());
        assert!(DitherRdpQuery::new(2.0, 1.1, 1.0, 1.0).is_err());
        assert!(DitherRdpQuery::new(2.0, 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn order_sweep() {
        let (a, b) = rdp_order_sweep(0.01, 1.0, 1.0, &[4.0]).unwrap();
        assert_eq!(a, 4.0);
        assert!(b.ln_value.is_finite());
        assert!(rdp_order_sweep(0.01, 1.0, 1.0, &[]).is_err());
        assert!(rdp_order_sweep(0.01, 1.0, 1.0, &[2.0, 0.5]).is_err());
    }
}
