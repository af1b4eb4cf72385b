use gradflow::eval::wasserstein2;
use gradflow::ot::{assignment, assignment_cost, sinkhorn, squared_cost, SinkhornOptions};
use gradflow::velocity::{ot_velocity, VelocitySource};
use proptest::prelude::*;

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * d)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sinkhorn_cost_near_assignment((n, a, b) in (2usize..=6).prop_flat_map(|n| (Just(n), cloud(n, 2), cloud(n, 2)))) {
        let c = squared_cost(&a, &b, 2).unwrap();
        let best = permutations(n).iter().map(|p| assignment_cost(&c, n, p)).fold(f64::INFINITY, f64::min);
        let scale = c.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let plan = sinkhorn(&c, n, n, &SinkhornOptions::new(1e-4 * scale, 50_000)).unwrap();
        let cost = plan.cost(&c);
        prop_assert!(cost >= best - 1e-9);
        prop_assert!(cost - best <= 0.02 * best.max(1e-3 * scale), "{cost} vs {best}");
        for r in plan.row_sums() {
            prop_assert!((r - 1.0 / n as f64).abs() <= 1e-6);
        }
        for s in plan.col_sums() {
            prop_assert!((s - 1.0 / n as f64).abs() <= 1e-6);
        }
        let perm = assignment(&c, n).unwrap();
        prop_assert!((assignment_cost(&c, n, &perm) - best).abs() < 1e-12);
    }

    #[test]
    fn translated_clouds_give_exact_velocity((a, t) in (cloud(6, 2), prop::array::uniform2(-1.0f64..1.0))) {
        let b: Vec<f64> = a.chunks(2).flat_map(|p| [p[0] + t[0], p[1] + t[1]]).collect();
        let v = ot_velocity(&a, &b, 2, 0.1, &VelocitySource::optimal_transport()).unwrap();
        for row in v.chunks(2) {
            prop_assert!((row[0] - 10.0 * t[0]).abs() < 1e-9);
            prop_assert!((row[1] - 10.0 * t[1]).abs() < 1e-9);
        }
        let w = wasserstein2(&a, &b, 2, 0).unwrap();
        prop_assert!((w - (t[0] * t[0] + t[1] * t[1]).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_symmetry_and_triangle((a, b, c) in (cloud(12, 3), cloud(12, 3), cloud(12, 3))) {
        let ab = wasserstein2(&a, &b, 3, 0).unwrap();
        let ba = wasserstein2(&b, &a, 3, 0).unwrap();
        let bc = wasserstein2(&b, &c, 3, 0).unwrap();
        let ac = wasserstein2(&a, &c, 3, 0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}
