mod common;

use common::{cosine_instance, max_abs_diff};
use otground::ot::{solve_ot, solve_pot, CostMatrix, DiscreteDistribution, SolverConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_of_two_scaling_is_bitwise(seed in 0u64..10_000, m in 1usize..=4, n in 1usize..=4, k in -3i32..=3) {
        let (c, a, b) = cosine_instance(seed, m, n);
        let lambda = 2f64.powi(k);
        let cfg = SolverConfig::default();
        let base = solve_ot(&c, &a, &b, &cfg).unwrap();
        let scaled_cfg = SolverConfig { beta: cfg.beta * lambda, ..cfg };
        let scaled = solve_ot(&c.scaled(lambda), &a, &b, &scaled_cfg).unwrap();
        prop_assert_eq!(base.plan.data(), scaled.plan.data());
        prop_assert_eq!(scaled.distance, lambda * base.distance);
    }

    #[test]
    fn general_scaling_is_covariant(seed in 0u64..10_000, lambda in 0.1f64..10.0) {
        let (c, a, b) = cosine_instance(seed, 3, 4);
        let cfg = SolverConfig::default();
        let base = solve_ot(&c, &a, &b, &cfg).unwrap();
        let scaled = solve_ot(&c.scaled(lambda), &a, &b, &SolverConfig { beta: cfg.beta * lambda, ..cfg }).unwrap();
        prop_assert!(max_abs_diff(base.plan.data(), scaled.plan.data()) < 1e-9);
        prop_assert!((scaled.distance - lambda * base.distance).abs() < 1e-9 * lambda);
    }

    #[test]
    fn row_permutation_is_equivariant(seed in 0u64..10_000, m in 2usize..=4, n in 1usize..=4, rot in 1usize..4) {
        let (c, a, b) = cosine_instance(seed, m, n);
        let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
        let cfg = SolverConfig::default();
        for pot in [false, true] {
            let solve = |c: &_, a: &DiscreteDistribution| {
                if pot { solve_pot(c, a, &b, &SolverConfig { mass_fraction: 0.5, ..cfg }) } else { solve_ot(c, a, &b, &cfg) }
            };
            let base = solve(&c, &a).unwrap();
            let moved = solve(&c.permute_rows(&perm), &a.permuted(&perm)).unwrap();
            prop_assert!((base.distance - moved.distance).abs() < 1e-12);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!(max_abs_diff(moved.plan.row(i), base.plan.row(p)) < 1e-12);
            }
        }
    }

    #[test]
    fn ot_column_marginals_are_exact(seed in 0u64..10_000, m in 1usize..=4, n in 1usize..=4, iters in 1usize..400) {
        // The column scaling runs last in every sweep.
        let (c, a, b) = cosine_instance(seed, m, n);
        let t = solve_ot(&c, &a, &b, &SolverConfig { iters, ..SolverConfig::default() }).unwrap();
        prop_assert!(max_abs_diff(&t.plan.col_sums(), b.weights()) < 1e-12);
    }

    #[test]
    fn plans_are_nonnegative_and_bounded(seed in 0u64..10_000, m in 1usize..=4, n in 1usize..=4, s in 0.05f64..=1.0) {
        let (c, a, b) = cosine_instance(seed, m, n);
        let cfg = SolverConfig { mass_fraction: s, ..SolverConfig::default() };
        let (lo, hi) = (c.min(), c.max());
        let ot = solve_ot(&c, &a, &b, &cfg).unwrap();
        let pot = solve_pot(&c, &a, &b, &cfg).unwrap();
        for (t, mass) in [(&ot, 1.0), (&pot, s)] {
            prop_assert!(t.plan.data().iter().all(|&v| v >= 0.0));
            prop_assert!(t.distance >= lo * mass - 1e-9 && t.distance <= hi * mass + 1e-9);
        }
    }

    #[test]
    fn pot_moves_exactly_the_requested_mass(seed in 0u64..10_000, m in 1usize..=4, n in 1usize..=4, s in 0.05f64..=1.0) {
        let (c, a, b) = cosine_instance(seed, m, n);
        let t = solve_pot(&c, &a, &b, &SolverConfig { mass_fraction: s, ..SolverConfig::default() }).unwrap();
        prop_assert!((t.plan.total() - s).abs() < 1e-12);
        prop_assert!((t.plan.transported_mass() - s).abs() < 1e-12);
    }

    #[test]
    fn solves_are_deterministic(seed in 0u64..10_000) {
        let (c, a, b) = cosine_instance(seed, 3, 4);
        let cfg = SolverConfig { mass_fraction: 0.5, ..SolverConfig::default() };
        prop_assert_eq!(solve_ot(&c, &a, &b, &cfg).unwrap(), solve_ot(&c, &a, &b, &cfg).unwrap());
        prop_assert_eq!(solve_pot(&c, &a, &b, &cfg).unwrap(), solve_pot(&c, &a, &b, &cfg).unwrap());
    }
}

#[test]
fn transpose_symmetry_on_a_separated_instance() {
    let c = CostMatrix::from_rows(&[vec![0.1, 0.9, 0.8], vec![0.7, 0.2, 0.9], vec![0.8, 0.9, 0.3]]).unwrap();
    let u = otground::ot::uniform_weights(3).unwrap();
    let cfg = SolverConfig::default();
    let fwd = solve_ot(&c, &u, &u, &cfg).unwrap();
    let bwd = solve_ot(&c.transposed(), &u, &u, &cfg).unwrap();
    assert!((fwd.distance - bwd.distance).abs() < 1e-9);
    assert!(max_abs_diff(fwd.plan.matrix().transpose().data(), bwd.plan.data()) < 1e-9);
    assert!(max_abs_diff(&fwd.plan.row_sums(), u.weights()) < 1e-6);
    assert!((fwd.distance - 0.2).abs() < 1e-6);
}
