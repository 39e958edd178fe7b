use mldlmc_core::*;
use proptest::prelude::*;

fn work(levels: &[(f64, f64, usize, usize)], m: &[(usize, usize)]) -> f64 {
    levels
        .iter()
        .zip(m)
        .map(|(&(_, _, p, n), &(m1, m2))| estimators::work_units(p, n, m1, m2))
        .sum()
}

fn variance(levels: &[(f64, f64, usize, usize)], m: &[(usize, usize)]) -> f64 {
    levels
        .iter()
        .zip(m)
        .map(|(&(v1, v2, _, _), &(m1, m2))| v1 / m1 as f64 + v2 / (m1 * m2) as f64)
        .sum()
}

/// Cheapest integer allocation meeting `target` by exhaustive search.
fn brute_force(
    levels: &[(f64, f64, usize, usize)],
    target: f64,
    max_m1: usize,
    max_m2: usize,
) -> Vec<(usize, usize)> {
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for a1 in 1..=max_m1 {
        for a2 in 1..=max_m2 {
            for b1 in 1..=max_m1 {
                for b2 in 1..=max_m2 {
                    let m = vec![(a1, a2), (b1, b2)];
                    if variance(levels, &m) > target {
                        continue;
                    }
                    let c = work(levels, &m);
                    if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                        best = Some((c, m));
                    }
                }
            }
        }
    }
    best.expect("search box too small").1
}

#[test]
fn allocation_is_near_the_brute_force_optimum() {
    let budget = ErrorBudget::absolute(0.1);
    let target = budget.variance_target(1.0).unwrap();
    let cases = [
        [(1e-2, 5e-2, 5, 4), (5e-4, 1e-2, 10, 8)],
        [(2e-2, 1e-2, 5, 4), (1e-3, 1e-3, 10, 8)],
        [(5e-3, 2e-1, 5, 4), (1e-4, 3e-2, 10, 8)],
    ];
    for levels in cases {
        let alloc = optimal_allocation(&levels, &budget, 1.0).unwrap();
        let ours: Vec<_> = alloc.iter().map(|a| (a.m1, a.m2)).collect();
        let brute = brute_force(&levels, target, 60, 60);
        assert!(variance(&levels, &ours) <= target * (1.0 + 1e-12));
        let (c_ours, c_brute) = (work(&levels, &ours), work(&levels, &brute));
        // integer rounding of a continuous optimum costs at most a few samples
        assert!(
            c_ours <= 1.25 * c_brute,
            "{ours:?} costs {c_ours}, {brute:?} costs {c_brute}"
        );
        for (o, b) in alloc.iter().zip(&brute) {
            let m1_star = b.0 as f64;
            assert!(
                (o.m1_opt - m1_star).abs() <= 1.0 + 0.2 * m1_star,
                "{} vs {}",
                o.m1_opt,
                m1_star
            );
        }
    }
}

#[test]
fn richardson_factor_is_two_for_first_order_halving() {
    assert_eq!(bias_estimate(0.125, 2, 1.0, &[]), 0.25);
    assert_eq!(bias_estimate(-0.125, 2, 1.0, &[]), 0.25);
}

proptest! {
    #[test]
    fn continuous_optimum_meets_the_target_exactly(
        v1 in proptest::collection::vec(1e-8f64..1e-1, 1..6),
        ratio in 0.1f64..100.0,
        tol in 1e-3f64..1e-1,
    ) {
        let levels: Vec<_> = v1
            .iter()
            .enumerate()
            .map(|(l, &v)| (v, v * ratio, 5 << l, 4 << l))
            .collect();
        let budget = ErrorBudget::absolute(tol);
        let alloc = optimal_allocation(&levels, &budget, 1.0).unwrap();
        let cont: f64 = levels
            .iter()
            .zip(&alloc)
            .map(|(&(v1, v2, _, _), a)| v1 / a.m1_opt + v2 / a.total_opt)
            .sum();
        let target = budget.variance_target(1.0).unwrap();
        prop_assert!((cont - target).abs() <= 1e-9 * target);
    }
}
