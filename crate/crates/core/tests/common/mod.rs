//! Oracles shared by the integration tests. None of this calls into the
//! code paths it is used to check.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Decimal fixed point with `DIGITS` fractional digits.
pub const DIGITS: u32 = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct Fixed(pub BigInt);

fn scale() -> BigInt {
    BigInt::from(10).pow(DIGITS)
}

impl Fixed {
    pub fn from_ratio(num: i64, den: i64) -> Self {
        Fixed(BigInt::from(num) * scale() / BigInt::from(den))
    }

    pub fn int(n: i64) -> Self {
        Fixed(BigInt::from(n) * scale())
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 * &o.0 / scale())
    }

    pub fn div(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 * scale() / &o.0)
    }

    pub fn div_int(&self, n: i64) -> Fixed {
        Fixed(&self.0 / BigInt::from(n))
    }

    pub fn to_f64(&self) -> f64 {
        // keep 17 significant digits worth of the integer part
        let (q, r) = self.0.div_rem(&scale());
        q.to_f64().unwrap() + r.to_f64().unwrap() / 10f64.powi(DIGITS as i32)
    }

    /// `exp(x)` by Taylor series for moderate `|x|`.
    pub fn exp(&self) -> Fixed {
        let mut term = Fixed::int(1);
        let mut sum = Fixed::int(1);
        let eps = BigInt::one();
        for k in 1..2000 {
            term = term.mul(self).div_int(k);
            if term.0.abs() < eps {
                break;
            }
            sum = sum.add(&term);
        }
        sum
    }

    /// `ln 2 = sum_{k>=1} 1 / (k 2^k)`.
    pub fn ln2() -> Fixed {
        let mut sum = Fixed(BigInt::zero());
        let mut pow = BigInt::from(2);
        for k in 1..400i64 {
            let term = scale() / (&pow * BigInt::from(k));
            if term.is_zero() {
                break;
            }
            sum.0 += term;
            pow *= 2;
        }
        sum
    }
}

/// Mann-Whitney AUC by enumerating every (member, non-member) pair.
pub fn pair_count_auc(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut favorable = 0.0;
    for &m in members {
        for &n in nonmembers {
            if m > n {
                favorable += 1.0;
            } else if m == n {
                favorable += 0.5;
            }
        }
    }
    favorable / (members.len() * nonmembers.len()) as f64
}

/// Relative error of a gradient against a reference, in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}
