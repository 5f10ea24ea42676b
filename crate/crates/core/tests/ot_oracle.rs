mod common;

use common::{cosine_instance, small_instance, vertex_enumeration};
use otground::ot::{exact_lp_oracle, CostMatrix, Marginals};

#[test]
fn simplex_agrees_with_vertex_enumeration_balanced() {
    for seed in 0..40 {
        let (c, a, b) = small_instance(seed);
        let lp = exact_lp_oracle(&c, &a, &b, Marginals::Balanced).unwrap();
        let brute = vertex_enumeration(&c, a.weights(), b.weights(), None);
        assert!((lp - brute).abs() < 1e-10, "seed {seed}: {lp} vs {brute}");
    }
}

#[test]
fn simplex_agrees_with_vertex_enumeration_partial() {
    for seed in 0..25 {
        let m = 1 + (seed as usize % 3);
        let n = 1 + (seed as usize / 3 % 3);
        let (c, a, b) = cosine_instance(seed, m, n);
        for s in [0.25, 0.5, 1.0] {
            let lp = exact_lp_oracle(&c, &a, &b, Marginals::Partial { mass: s }).unwrap();
            let brute = vertex_enumeration(&c, a.weights(), b.weights(), Some(s));
            assert!((lp - brute).abs() < 1e-10, "seed {seed} s {s}: {lp} vs {brute}");
        }
    }
}

#[test]
fn partial_optimum_is_monotone_in_mass() {
    for seed in 0..30 {
        let (c, a, b) = small_instance(seed);
        let mut prev = 0.0;
        for k in 1..=10 {
            let s = k as f64 / 10.0;
            let d = exact_lp_oracle(&c, &a, &b, Marginals::Partial { mass: s }).unwrap();
            assert!(d >= prev - 1e-12, "seed {seed}: D({s}) = {d} < {prev}");
            prev = d;
        }
    }
}

#[test]
fn shifting_costs_shifts_both_distances_equally() {
    for seed in 0..20 {
        let (c1, a, b) = cosine_instance(seed, 3, 3);
        let (c2, _, _) = cosine_instance(seed + 1000, 3, 3);
        for marg in [Marginals::Balanced, Marginals::Partial { mass: 0.5 }] {
            let mass = match marg {
                Marginals::Balanced => 1.0,
                Marginals::Partial { mass } => mass,
            };
            let gap = exact_lp_oracle(&c1, &a, &b, marg).unwrap() - exact_lp_oracle(&c2, &a, &b, marg).unwrap();
            let shift = 0.37;
            let d1 = exact_lp_oracle(&c1.shifted(shift), &a, &b, marg).unwrap();
            let d2 = exact_lp_oracle(&c2.shifted(shift), &a, &b, marg).unwrap();
            assert!((d1 - exact_lp_oracle(&c1, &a, &b, marg).unwrap() - shift * mass).abs() < 1e-9);
            assert!((d1 - d2 - gap).abs() < 1e-6);
        }
    }
}

#[test]
fn hand_vertex_example() {
    let c = CostMatrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
    let h = otground::ot::uniform_weights(2).unwrap();
    assert!((vertex_enumeration(&c, h.weights(), h.weights(), None) - 0.5).abs() < 1e-12);
}
