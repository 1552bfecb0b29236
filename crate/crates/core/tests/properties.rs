use proptest::prelude::*;

use krause_core::clustering::{detect_clusters, Equilibrium};
use krause_core::continuum::{
    adjacency_apply, distance_to_f, laplacian_apply, laplacian_residual, lyapunov_decrement,
    potential, potential_naive, potential_tightness, psd_check, scalar_product, LYAPUNOV_TOL,
};
use krause_core::dynamics::{advance, evolve, is_fixed_point};
use krause_core::stability::{center_of_mass_test, pair_condition, PairVerdict};
use krause_core::{simulate, step, step_naive, OpinionState, SimParams};

/// Opinion layouts that stress different parts of the update: dense uniform
/// clouds, tight clumps, and integer lattices with exact distance-1 ties.
fn opinions(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    let uniform =
        (1..=max_n, 0.0..20.0f64).prop_flat_map(|(n, len)| prop::collection::vec(0.0..=len, n));
    let clumps = prop::collection::vec((0..12u32, -0.05..0.05f64), 1..=max_n)
        .prop_map(|v| v.into_iter().map(|(c, e)| 1.3 * c as f64 + e).collect());
    let lattice = prop::collection::vec((0..15u32, 0..4u32), 1..=max_n).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| a as f64 + 0.25 * b as f64)
            .collect()
    });
    prop_oneof![uniform, clumps, lattice]
}

fn state(max_n: usize) -> impl Strategy<Value = OpinionState> {
    opinions(max_n)
        .prop_flat_map(|x| {
            let n = x.len();
            (
                Just(x),
                prop::collection::vec(0.1..10.0f64, n),
                any::<bool>(),
            )
        })
        .prop_map(|(x, w, unit)| {
            let agents = if unit {
                x.into_iter().map(|x| (x, 1.0)).collect()
            } else {
                x.into_iter().zip(w).collect()
            };
            OpinionState::from_unsorted(agents).unwrap()
        })
}

fn state_with_vectors(max_n: usize) -> impl Strategy<Value = (OpinionState, Vec<f64>, Vec<f64>)> {
    state(max_n).prop_flat_map(|s| {
        let n = s.len();
        (
            Just(s),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
        )
    })
}

/// Clusters pairwise at least 1 apart, each made of coincident agents.
fn fixed_point_state() -> impl Strategy<Value = OpinionState> {
    prop::collection::vec((1.0..3.0f64, 1..5usize, 0.5..4.0f64), 1..8).prop_map(|clusters| {
        let mut agents = Vec::new();
        let mut pos = -3.0;
        for (gap, count, w) in clusters {
            pos += gap;
            agents.extend(std::iter::repeat_n((pos, w), count));
        }
        OpinionState::from_unsorted(agents).unwrap()
    })
}

fn bits(s: &OpinionState) -> Vec<u64> {
    s.opinions().iter().map(|x| x.to_bits()).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn step_preserves_order_and_envelope(s in state(500)) {
        let next = step(&s);
        let x = next.opinions();
        prop_assert!(x.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(s.min_opinion() <= next.min_opinion());
        prop_assert!(next.max_opinion() <= s.max_opinion());
        prop_assert_eq!(next.weights(), s.weights());
        prop_assert_eq!(next.time(), s.time() + 1);
    }

    #[test]
    fn step_matches_all_pairs_reference(s in state(500)) {
        prop_assert_eq!(bits(&step(&s)), bits(&step_naive(&s)));
    }

    #[test]
    fn groups_evolve_independently(s in state(500)) {
        let whole = step(&s);
        for g in s.decoupled_groups() {
            let alone = step(&s.slice(g.clone()).unwrap());
            prop_assert_eq!(bits(&alone), bits(&whole.slice(g).unwrap()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn replicated_agents_match_weighted_agents(s in state(200), k in 2..5usize) {
        let split: Vec<(f64, f64)> = s
            .opinions()
            .iter()
            .zip(s.weights())
            .flat_map(|(&x, &w)| std::iter::repeat_n((x, w / k as f64), k))
            .collect();
        let split = OpinionState::from_unsorted(split).unwrap();
        let a = step(&s);
        let b = step(&split);
        for (i, x) in a.opinions().iter().enumerate() {
            for r in 0..k {
                prop_assert!((x - b.opinions()[i * k + r]).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn weight_scale_is_irrelevant(s in state(300), c in 0.01..100.0f64) {
        let w: Vec<f64> = s.weights().iter().map(|w| w * c).collect();
        let scaled = OpinionState::new(s.opinions().to_vec(), w).unwrap();
        let (a, b) = (step(&s), step(&scaled));
        for (x, y) in a.opinions().iter().zip(b.opinions()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn fixed_points_are_absorbing(s in fixed_point_state()) {
        prop_assert!(is_fixed_point(&s, 0.0));
        prop_assert_eq!(bits(&step(&s)), bits(&s));
    }

    #[test]
    fn equilibrium_clusters_conserve_mass(s in state(60)) {
        let (result, _) = simulate(&s, &SimParams::sparse()).unwrap();
        prop_assert!(result.converged);
        let eq = Equilibrium::from_result(&result, SimParams::default().fixed_point_tol).unwrap();
        let total = s.total_weight();
        prop_assert!((eq.total_weight() - total).abs() <= 1e-12 * total);
        for w in eq.positions().windows(2) {
            prop_assert!(w[1] - w[0] >= 1.0 - 1e-9);
        }
        let reference = detect_clusters(&result.final_state, 0.5);
        for threshold in [0.1, 0.9] {
            let other = detect_clusters(&result.final_state, threshold);
            prop_assert_eq!(&other, &reference);
        }
    }

    #[test]
    fn centers_of_the_nearest_equilibrium_are_separated(s in state(200)) {
        let report = distance_to_f(&s);
        prop_assert!(report.epsilon >= 0.0);
        for c in report.centers.windows(2) {
            prop_assert!(c[1] - c[0] >= 1.0);
        }
        // Mass farther than epsilon from the witness is at most epsilon.
        let captured: f64 = report.center_masses.iter().sum();
        prop_assert!(captured >= 1.0 - report.epsilon - 1e-12);
        prop_assert!(captured <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn operators_are_symmetric((s, y, z) in state_with_vectors(300)) {
        let ay = adjacency_apply(&s, &y).unwrap();
        let az = adjacency_apply(&s, &z).unwrap();
        let ly = laplacian_apply(&s, &y).unwrap();
        let lz = laplacian_apply(&s, &z).unwrap();
        let scale = s.total_weight().powi(2) * max_abs(&y).max(1.0) * max_abs(&z).max(1.0);
        prop_assert!((scalar_product(&s, &y, &az) - scalar_product(&s, &ay, &z)).abs() <= 1e-12 * scale);
        prop_assert!((scalar_product(&s, &y, &lz) - scalar_product(&s, &ly, &z)).abs() <= 1e-12 * scale);
        let yy = s.total_weight().powi(2) * max_abs(&y).max(1.0).powi(2);
        prop_assert!(psd_check(&s, &y).unwrap() >= -1e-12 * yy);
        prop_assert!(psd_check(&s, &z).unwrap() >= -1e-12 * scale);
    }

    #[test]
    fn potential_is_tight(s in state(300)) {
        let (v, rhs) = potential_tightness(&s);
        prop_assert!((v - rhs).abs() <= 1e-12 * v.max(1.0));
        let naive = potential_naive(&s);
        prop_assert!((potential(&s) - naive).abs() <= 1e-12 * naive.max(1.0));
    }

    #[test]
    fn update_is_a_laplacian_step(s in state(500)) {
        let r = laplacian_residual(&s);
        prop_assert!(r.identity_error <= 1e-12, "identity error {}", r.identity_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn potential_decreases_along_trajectories(s in state(150)) {
        let traj = evolve(&s, 50, 1).unwrap();
        for snap in &traj.snapshots {
            let l = lyapunov_decrement(snap);
            prop_assert!(l.holds(LYAPUNOV_TOL), "t={} dV={} bound={}", snap.time(), l.delta_v, l.bound);
            prop_assert!(l.delta_v <= LYAPUNOV_TOL);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pair_rule_is_the_center_of_mass_rule(w_a in 0.01..100.0f64, w_b in 0.01..100.0f64, d in 0.01..4.0f64) {
        let verdict = pair_condition(w_a, w_b, d).unwrap();
        let escapes = center_of_mass_test(0.0, d, w_a, w_b);
        prop_assert_eq!(verdict == PairVerdict::Stable, escapes, "w=({}, {}) d={}", w_a, w_b, d);
        prop_assert_eq!(pair_condition(w_b, w_a, d).unwrap(), verdict);
    }
}

#[test]
fn equal_weights_at_distance_two_are_stable() {
    assert_eq!(pair_condition(1.0, 1.0, 2.0).unwrap(), PairVerdict::Stable);
    assert!(!center_of_mass_test(0.0, 2.0, 1.0, 1.0));
    assert_eq!(
        pair_condition(1.0, 1.0, 1.999).unwrap(),
        PairVerdict::Unstable
    );
}

#[test]
fn mean_opinion_is_not_conserved() {
    let s = OpinionState::unweighted(vec![0.0, 0.5, 1.2]).unwrap();
    let next = step(&s);
    let mean = |s: &OpinionState| s.opinions().iter().sum::<f64>() / s.len() as f64;
    // Windows {0, 0.5}, {0, 0.5, 1.2}, {0.5, 1.2}.
    let expected = [0.25, 1.7 / 3.0, 0.85];
    for (x, e) in next.opinions().iter().zip(expected) {
        assert!((x - e).abs() < 1e-15);
    }
    assert!((mean(&s) - 1.7 / 3.0).abs() < 1e-15);
    assert!((mean(&next) - 5.0 / 9.0).abs() < 1e-15);
}

#[test]
fn advance_equals_repeated_step() {
    let s = OpinionState::unweighted((0..40).map(|k| k as f64 * 0.11).collect()).unwrap();
    let mut t = s.clone();
    for _ in 0..7 {
        t = step(&t);
    }
    assert_eq!(bits(&advance(&s, 7)), bits(&t));
}
