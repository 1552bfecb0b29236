use krause_core::continuum::{refine_compare, DensitySpec};
use krause_core::experiments::{
    bifurcation_sweep, metastable, semi_infinite, single_cluster_bound_check,
    slow_convergence_state, uniform_spaced,
};
use krause_core::{simulate, SimParams};

/// Plain synchronous update with running window sums, independent of the
/// library's compensated machinery. Returns the number of clusters at the
/// fixed point.
fn oracle_cluster_count(length: f64, n: usize) -> usize {
    let mut x: Vec<f64> = (0..n).map(|i| length * i as f64 / (n - 1) as f64).collect();
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut sum = 0.0;
        for i in 0..n {
            while hi < n && x[hi] - x[i] < 1.0 {
                sum += x[hi];
                hi += 1;
            }
            while x[i] - x[lo] >= 1.0 {
                sum -= x[lo];
                lo += 1;
            }
            next[i] = sum / (hi - lo) as f64;
        }
        let moved = x
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = next;
        if moved < 1e-10 {
            break;
        }
    }
    1 + x.windows(2).filter(|p| p[1] - p[0] > 0.5).count()
}

#[test]
fn sweep_cluster_counts_match_oracle() {
    let rows = bifurcation_sweep(4.0, 7.0, 1.0, 1000.0, &SimParams::sparse()).unwrap();
    let lengths: Vec<f64> = rows.iter().map(|r| r.length).collect();
    assert_eq!(lengths, [4.0, 5.0, 6.0, 7.0]);
    for row in &rows {
        assert_eq!(
            row.positions.len(),
            oracle_cluster_count(row.length, row.n),
            "L = {}",
            row.length
        );
    }
    // One cluster at the center, reported relative to L/2.
    assert_eq!(rows[0].positions.len(), 1);
    assert!(rows[0].positions[0].abs() < 1e-9);
    assert_eq!(rows[0].weights, [4000.0]);
    assert!(rows[3].positions.len() >= 2);
}

#[test]
fn length_six_is_resolution_independent() {
    // The symmetric profile on [0, 6] re-merges into one cluster; the count
    // does not change when the resolution doubles.
    let coarse = bifurcation_sweep(6.0, 6.0, 0.1, 1000.0, &SimParams::sparse()).unwrap();
    let fine = bifurcation_sweep(6.0, 6.0, 0.1, 2000.0, &SimParams::sparse()).unwrap();
    assert_eq!(coarse[0].positions.len(), fine[0].positions.len());
    assert_eq!(coarse[0].positions.len(), 1);
}

#[test]
fn sweep_rows_are_symmetric() {
    let rows = bifurcation_sweep(5.0, 5.6, 0.2, 1000.0, &SimParams::sparse()).unwrap();
    for row in rows {
        let k = row.positions.len();
        for i in 0..k {
            assert!(
                (row.positions[i] + row.positions[k - 1 - i]).abs() < 1e-6,
                "L = {}",
                row.length
            );
            assert_eq!(row.weights[i], row.weights[k - 1 - i]);
        }
        assert_eq!(row.weights.iter().sum::<f64>(), row.n as f64);
    }
}

#[test]
fn single_cluster_at_half_length() {
    let check = single_cluster_bound_check(3.8, 10001, &SimParams::sparse()).unwrap();
    assert!(check.single_cluster());
    assert!((check.clusters[0].position - 1.9).abs() < 1e-9);
    assert!(check.middle_drift < 1e-12);
    // Envelope after one and two steps, mirrored on the right.
    assert!((check.after_one.1 - (3.8 - check.after_one.0)).abs() < 1e-9);
    assert!((check.after_two.1 - (3.8 - check.after_two.0)).abs() < 1e-9);
}

#[test]
fn single_cluster_check_rejects_even_counts() {
    assert!(single_cluster_bound_check(3.8, 10000, &SimParams::sparse()).is_err());
}

#[test]
fn half_line_spacings_are_stable_under_density() {
    let params = SimParams::sparse();
    let coarse = semi_infinite(50.0, 10.0, &params).unwrap();
    let fine = semi_infinite(50.0, 100.0, &params).unwrap();
    // The four leading spacings; deeper in, the coarse grid drifts.
    assert!(coarse.spacings.len() >= 4 && fine.spacings.len() >= 4);
    for (a, b) in coarse.spacings.iter().zip(&fine.spacings).take(4) {
        assert!((a - b).abs() < 0.1, "{a} vs {b}");
    }
    for c in &fine.clusters {
        assert!(c.position < 50.0 - 1.0);
    }
}

#[test]
fn metastable_phase_is_found() {
    let report = metastable(&SimParams::default()).unwrap();
    assert!(report.convergence_time.is_some());
    assert!(!report.phases.is_empty());
    let phase = &report.phases[0];
    assert!(phase.end - phase.start >= 100);
    assert!(phase.gap_start > 1.0);
}

#[test]
fn slow_convergence_hand_iteration() {
    // 0.1, 1, 1.9: the middle agent sees everyone, the outer ones see it.
    let s = slow_convergence_state(5).unwrap();
    let (result, _) = simulate(&s, &SimParams::default()).unwrap();
    assert_eq!(result.convergence_time, Some(3));
    for x in result.final_state.opinions() {
        assert!((x - 1.0).abs() < 1e-12);
    }
}

#[test]
fn refinement_converges_before_the_clusters_separate() {
    let density = DensitySpec::uniform(0.0, 6.0).unwrap();
    for horizon in [1, 4, 8] {
        let r = refine_compare(&density, &[100, 1000, 10000], horizon).unwrap();
        assert!(r.strictly_decreasing(), "horizon {horizon}: {r:?}");
    }
}

#[test]
fn uniform_spacing_layout() {
    let s = uniform_spaced(2.0, 5).unwrap();
    assert_eq!(s.opinions(), [0.0, 0.5, 1.0, 1.5, 2.0]);
}
