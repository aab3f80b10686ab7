mod common;

use proptest::prelude::*;

use common::{pair_count_auc, Fixed};
use ferret_lab::accountant::{amplified_epsilon, epsilon_max, epsilon_total, optimal_p};
use ferret_lab::evaluation::roc_auc;
use ferret_lab::mechanism::{partition_groups, PartitionScheme, Sign, SignPayload};

#[test]
fn amplified_epsilon_matches_high_precision() {
    let oracle = Fixed::ln2().mul(&Fixed::from_ratio(5, 1000)).to_f64();
    let got = amplified_epsilon(std::f64::consts::LN_2, 0.005).unwrap();
    assert!(((got - oracle) / oracle).abs() < 1e-15, "{got} vs {oracle}");
    // composition: G T copies of the amplified single-release leakage
    let total = epsilon_total(2, 1000, 0.005, 1.0).unwrap();
    assert!((total - 2000.0 * got).abs() < 1e-12);
}

#[test]
fn ln2_oracle_agrees_with_std() {
    assert!((Fixed::ln2().to_f64() - std::f64::consts::LN_2).abs() < 1e-16);
}

proptest! {
    #[test]
    fn accountant_linear_in_p(g in 1u64..500, t in 1u64..5000, s in 1e-4f64..1.0, p in 0.0f64..1.0) {
        let e = epsilon_total(g, t, s, p).unwrap();
        let emax = epsilon_max(g, t, s).unwrap();
        prop_assert!((e - p * emax).abs() <= 1e-9 * emax);
    }

    #[test]
    fn optimal_p_round_trips(g in 1u64..500, t in 1u64..5000, s in 1e-4f64..1.0, frac in 0.001f64..0.999) {
        let emax = epsilon_max(g, t, s).unwrap();
        let p = optimal_p(frac * emax, g, t, s).unwrap();
        prop_assert!((epsilon_total(g, t, s, p).unwrap() - frac * emax).abs() <= 1e-9 * emax);
    }

    #[test]
    fn budget_at_or_above_headroom_is_rejected(g in 1u64..50, t in 1u64..500, s in 1e-3f64..1.0, over in 1.0f64..3.0) {
        let emax = epsilon_max(g, t, s).unwrap();
        prop_assert!(optimal_p(over * emax, g, t, s).is_err());
    }

    #[test]
    fn auc_matches_pair_count(a in prop::collection::vec(-5i32..5, 1..40), b in prop::collection::vec(-5i32..5, 1..40)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        prop_assert!((roc_auc(&a, &b).unwrap().auc - pair_count_auc(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_relabel(a in prop::collection::vec(-3.0f64..3.0, 1..50), b in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let f = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x.exp() * 7.0 + 1.0).collect() };
        let r0 = roc_auc(&a, &b).unwrap().auc;
        let r1 = roc_auc(&f(&a), &f(&b)).unwrap().auc;
        prop_assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn auc_swap_symmetry(a in prop::collection::vec(-3.0f64..3.0, 1..50), b in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let r = roc_auc(&a, &b).unwrap().auc + roc_auc(&b, &a).unwrap().auc;
        prop_assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partitions_cover_every_coordinate_once(
        lens in prop::collection::vec(1usize..40, 1..8),
        k in 1usize..20,
        which in 0u8..3,
    ) {
        let shapes: Vec<(usize, usize)> = lens.iter().copied().enumerate().collect();
        let total: usize = lens.iter().sum();
        let scheme = match which {
            0 => PartitionScheme::Max,
            1 => PartitionScheme::BucketOfK(k),
            _ => PartitionScheme::Two,
        };
        let part = match partition_groups(&shapes, scheme) {
            Ok(p) => p,
            Err(_) => {
                // the only rejected case: two groups from a single scalar
                prop_assert!(matches!(scheme, PartitionScheme::Two) && total == 1);
                return Ok(());
            }
        };
        let mut seen: Vec<Vec<u32>> = lens.iter().map(|&l| vec![0; l]).collect();
        for group in &part.groups {
            prop_assert!(!group.is_empty());
            for span in group {
                for i in span.offset..span.offset + span.length {
                    seen[span.tensor_id][i] += 1;
                }
            }
        }
        prop_assert!(seen.iter().flatten().all(|&c| c == 1));
        let n = lens.len();
        match scheme {
            PartitionScheme::Max => prop_assert_eq!(part.num_groups(), n),
            PartitionScheme::Two => prop_assert_eq!(part.num_groups(), 2),
            PartitionScheme::BucketOfK(k) => prop_assert_eq!(part.num_groups(), n.div_ceil(k)),
        }
    }

    #[test]
    fn sign_payload_round_trips(bits in prop::collection::vec(any::<bool>(), 0..100)) {
        let signs: Vec<Sign> = bits.iter().map(|&b| Sign::from_bit(b)).collect();
        let packed = SignPayload::pack(signs.clone());
        prop_assert_eq!(packed.bytes.len(), bits.len().div_ceil(8));
        prop_assert_eq!(packed.bit_len, bits.len());
        prop_assert_eq!(packed.unpack(), signs);
    }
}
