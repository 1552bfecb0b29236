//! Measure-level diagnostics: regularity bounds, distance to the fixed-point
//! set, continuity of the update map, and discretization refinement.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{DensitySpec, QuantileRule};
use crate::dynamics::step;
use crate::error::{Error, Result};
use crate::state::OpinionState;

/// Window width used by [`continuity_probe`] to estimate density bounds.
pub const REGULARITY_WINDOW: f64 = 0.1;

/// Capture radii tried when choosing cluster centers in [`distance_to_f`].
const CAPTURE_RADII: [f64; 9] = [0.0, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityBounds {
    pub window: f64,
    /// Smallest mass per unit length over windows inside the opinion range.
    pub min_density: f64,
    /// Largest mass per unit length over windows inside the opinion range.
    pub max_density: f64,
}

impl RegularityBounds {
    pub fn is_regular(&self) -> bool {
        self.min_density > 0.0 && self.max_density.is_finite()
    }
}

/// Slides a window of width `window` over `[min, max]` and reports the
/// extreme masses per unit length.
pub fn regularity_bounds(state: &OpinionState, window: f64) -> Result<RegularityBounds> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::param("window", "must be positive and finite"));
    }
    let span = state.span();
    if span < window {
        return Err(Error::SpanTooSmall { span, window });
    }
    let x = state.opinions();
    let w = state.weights();
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &wi in w {
        acc += wi;
        prefix.push(acc);
    }
    let mass = |lo: usize, hi: usize| {
        if hi > lo {
            prefix[hi] - prefix[lo]
        } else {
            0.0
        }
    };
    let (lo_x, hi_x) = (state.min_opinion(), state.max_opinion());

    // Heaviest windows are closed and touch an agent on one side.
    let mut heaviest = 0.0f64;
    for &a in x {
        if a + window <= hi_x {
            let lo = x.partition_point(|&v| v < a);
            let hi = x.partition_point(|&v| v <= a + window);
            heaviest = heaviest.max(mass(lo, hi));
        }
        if a - window >= lo_x {
            let lo = x.partition_point(|&v| v < a - window);
            let hi = x.partition_point(|&v| v <= a);
            heaviest = heaviest.max(mass(lo, hi));
        }
    }
    // Lightest windows are open and start just past an agent.
    let mut lightest = f64::INFINITY;
    for &a in x {
        if a + window > hi_x {
            break;
        }
        let lo = x.partition_point(|&v| v <= a);
        let hi = x.partition_point(|&v| v < a + window);
        lightest = lightest.min(mass(lo, hi));
    }
    Ok(RegularityBounds {
        window,
        min_density: lightest / window,
        max_density: heaviest / window,
    })
}

/// Closeness of a state to the fixed-point set in the measure metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuMetricReport {
    /// Smallest `ε` with `mass{|x - s| >= ε} < ε` for the witness `s`. It
    /// bounds the true distance to the fixed-point set from above.
    pub epsilon: f64,
    /// Values of the witness, pairwise at least 1 apart.
    pub centers: Vec<f64>,
    /// Normalized mass within `epsilon` of each center.
    pub center_masses: Vec<f64>,
}

/// Agents are mapped to their nearest center, where centers are chosen
/// greedily by captured mass among the agents' own opinions.
pub fn distance_to_f(state: &OpinionState) -> MuMetricReport {
    let total = state.total_weight();
    let mut best: Option<MuMetricReport> = None;
    for rho in CAPTURE_RADII {
        let centers = greedy_centers(state, rho);
        let dist = nearest_distances(state.opinions(), &centers);
        let epsilon = minimal_epsilon(&dist, state.weights(), total);
        if best.as_ref().is_none_or(|b| epsilon < b.epsilon) {
            let mut center_masses = vec![0.0; centers.len()];
            for (k, &xk) in state.opinions().iter().enumerate() {
                let c = nearest_center(&centers, xk);
                if (xk - centers[c]).abs() <= epsilon {
                    center_masses[c] += state.weights()[k] / total;
                }
            }
            best = Some(MuMetricReport {
                epsilon,
                centers,
                center_masses,
            });
        }
    }
    best.expect("at least one radius")
}

fn greedy_centers(state: &OpinionState, rho: f64) -> Vec<f64> {
    let x = state.opinions();
    let w = state.weights();
    let mut prefix = vec![0.0];
    for &wi in w {
        prefix.push(prefix.last().unwrap() + wi);
    }
    let captured: Vec<f64> = x
        .iter()
        .map(|&a| {
            let lo = x.partition_point(|&v| v < a - rho);
            let hi = x.partition_point(|&v| v <= a + rho);
            prefix[hi] - prefix[lo]
        })
        .collect();
    let mut available = vec![true; x.len()];
    let mut centers = Vec::new();
    loop {
        let pick = (0..x.len())
            .filter(|&k| available[k])
            .fold(None, |acc: Option<usize>, k| match acc {
                Some(b) if captured[b] >= captured[k] => Some(b),
                _ => Some(k),
            });
        let Some(k) = pick else { break };
        centers.push(x[k]);
        for (j, a) in available.iter_mut().enumerate() {
            if (x[j] - x[k]).abs() < 1.0 {
                *a = false;
            }
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

fn nearest_center(centers: &[f64], v: f64) -> usize {
    let k = centers.partition_point(|&c| c < v);
    if k == 0 {
        0
    } else if k == centers.len() || v - centers[k - 1] <= centers[k] - v {
        k - 1
    } else {
        k
    }
}

fn nearest_distances(x: &[f64], centers: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| (v - centers[nearest_center(centers, v)]).abs())
        .collect()
}

/// Infimum of `ε` with `mass{d >= ε} < ε`, computed exactly from the
/// step function `ε -> mass{d >= ε}`.
fn minimal_epsilon(dist: &[f64], weights: &[f64], total: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = dist
        .iter()
        .zip(weights)
        .map(|(&d, &w)| (d, w / total))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let Some(&(top, _)) = pairs.first() else {
        return 0.0;
    };
    let mut best = top;
    let mut cum = 0.0;
    let mut k = 0;
    while k < pairs.len() {
        let level = pairs[k].0;
        while k < pairs.len() && pairs[k].0 == level {
            cum += pairs[k].1;
            k += 1;
        }
        let next = pairs.get(k).map_or(0.0, |p| p.0);
        let candidate = next.max(cum);
        if candidate < level {
            best = best.min(candidate);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub delta: f64,
    pub trials: usize,
    /// Largest `‖U(y) - U(x)‖∞` over the trials.
    pub response: f64,
    /// `(1 + 24 M/m) delta`.
    pub bound: f64,
    pub regularity: RegularityBounds,
}

impl ContinuityReport {
    pub fn within_bound(&self) -> bool {
        self.response <= self.bound
    }
}

/// Perturbs every opinion by at most `delta`, keeps the perturbed state
/// sorted, and measures the largest change of the updated state.
pub fn continuity_probe<R: Rng + ?Sized>(
    state: &OpinionState,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ContinuityReport> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::param("delta", "must be nonnegative and finite"));
    }
    let regularity = regularity_bounds(state, REGULARITY_WINDOW)
        .map_err(|e| Error::NotRegular(e.to_string()))?;
    if !regularity.is_regular() {
        return Err(Error::NotRegular(format!(
            "density bounds [{}, {}] over windows of width {}",
            regularity.min_density, regularity.max_density, REGULARITY_WINDOW
        )));
    }
    let base = step(state);
    let mut response = 0.0f64;
    for _ in 0..trials {
        let mut y: Vec<f64> = state
            .opinions()
            .iter()
            .map(|&x| x + delta * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        y.sort_by(f64::total_cmp);
        let perturbed = OpinionState::new(y, state.weights().to_vec())?;
        let moved = step(&perturbed);
        let diff = base
            .opinions()
            .iter()
            .zip(moved.opinions())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        response = response.max(diff);
    }
    Ok(ContinuityReport {
        delta,
        trials,
        response,
        bound: (1.0 + 24.0 * regularity.max_density / regularity.min_density) * delta,
        regularity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Refinement {
    /// Sup-norm distance of each discretization's opinion function from the
    /// finest one after `horizon` steps, in the order of `n_list`.
    Applied {
        horizon: u64,
        errors: Vec<(usize, f64)>,
    },
    /// Some discretization reached a span of at most 2 before the horizon.
    NotApplicable { n: usize, time: u64, span: f64 },
}

impl Refinement {
    pub fn strictly_decreasing(&self) -> bool {
        match self {
            Refinement::Applied { errors, .. } => errors.windows(2).all(|p| p[1].1 < p[0].1),
            Refinement::NotApplicable { .. } => false,
        }
    }
}

/// Runs quantile discretizations of `density` for `horizon` steps and
/// compares each one against the largest `n` as functions on `[0, 1]`.
pub fn refine_compare(density: &DensitySpec, n_list: &[usize], horizon: u64) -> Result<Refinement> {
    if n_list.is_empty() {
        return Err(Error::param("n_list", "must not be empty"));
    }
    if n_list.windows(2).any(|p| p[1] <= p[0]) || n_list[0] == 0 {
        return Err(Error::param(
            "n_list",
            "must be positive and strictly increasing",
        ));
    }
    let runs: Vec<std::result::Result<OpinionState, Refinement>> = n_list
        .par_iter()
        .map(|&n| {
            let mut s = density
                .discretize(n, QuantileRule::Midpoint)
                .expect("n >= 1");
            for t in 0..horizon {
                if s.span() <= 2.0 {
                    return Err(Refinement::NotApplicable {
                        n,
                        time: t,
                        span: s.span(),
                    });
                }
                s = step(&s);
            }
            Ok(s)
        })
        .collect();
    let mut states = Vec::with_capacity(runs.len());
    for r in runs {
        match r {
            Ok(s) => states.push(s),
            Err(flag) => return Ok(flag),
        }
    }
    let finest = states.last().expect("nonempty");
    let errors = states
        .iter()
        .map(|s| (s.len(), sup_distance(s.opinions(), finest.opinions())))
        .collect();
    Ok(Refinement::Applied { horizon, errors })
}

/// Sup distance between the step functions `α -> a[⌈α n_a⌉]` and
/// `α -> b[⌈α n_b⌉]` on `(0, 1]`.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (1u128, 1u128);
    let mut sup = 0.0f64;
    loop {
        sup = sup.max((a[i as usize - 1] - b[j as usize - 1]).abs());
        let (ea, eb) = (i * nb, j * na);
        if ea <= eb {
            i += 1;
        }
        if eb <= ea {
            j += 1;
        }
        if i > na || j > nb {
            return sup;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weighted(pairs: &[(f64, f64)]) -> OpinionState {
        OpinionState::from_unsorted(pairs.to_vec()).unwrap()
    }

    #[test]
    fn uniform_bounds() {
        let n = 1000;
        let s = DensitySpec::uniform(0.0, 10.0)
            .unwrap()
            .discretize(n, QuantileRule::Midpoint)
            .unwrap();
        let b = regularity_bounds(&s, 1.0).unwrap();
        assert!((b.min_density - 0.1).abs() <= 2.0 / n as f64);
        assert!((b.max_density - 0.1).abs() <= 2.0 / n as f64);
        assert!(matches!(
            regularity_bounds(&s, 20.0),
            Err(Error::SpanTooSmall { .. })
        ));
    }

    #[test]
    fn short_profile_collapses() {
        // Span 1.8: the edges pull inward and pile up mass after one step.
        let bounds_after = |n: usize| {
            let s = DensitySpec::uniform(0.0, 1.8)
                .unwrap()
                .discretize(n, QuantileRule::Midpoint)
                .unwrap();
            let next = step(&s);
            regularity_bounds(&next, 100.0 / n as f64)
                .unwrap()
                .max_density
        };
        assert!(bounds_after(10_000) > 5.0 * bounds_after(1000));

        let wide = |n: usize| {
            let s = DensitySpec::uniform(0.0, 6.0)
                .unwrap()
                .discretize(n, QuantileRule::Midpoint)
                .unwrap();
            regularity_bounds(&step(&s), 0.1).unwrap()
        };
        for n in [1000, 10_000] {
            let b = wide(n);
            assert!(b.min_density > 0.05 && b.max_density < 1.0);
        }
    }

    #[test]
    fn distance_examples() {
        let fixed = weighted(&[(0.0, 0.5), (1.5, 0.5)]);
        let r = distance_to_f(&fixed);
        assert_eq!(r.epsilon, 0.0);
        assert_eq!(r.centers, vec![0.0, 1.5]);

        let close = weighted(&[(0.0, 0.5), (0.5, 0.5)]);
        let r = distance_to_f(&close);
        assert_eq!(r.epsilon, 0.5);
        assert_eq!(r.centers, vec![0.0]);
    }

    #[test]
    fn minimal_epsilon_matches_scan() {
        let dist = [0.3, 0.0, 0.05, 0.2, 0.05, 0.7];
        let w = [0.1, 0.4, 0.1, 0.2, 0.1, 0.1];
        let eps = minimal_epsilon(&dist, &w, 1.0);
        let tail = |e: f64| {
            dist.iter()
                .zip(&w)
                .filter(|(d, _)| **d >= e)
                .map(|(_, w)| w)
                .sum::<f64>()
        };
        let mut scan = f64::INFINITY;
        for k in 0..=200_000 {
            let e = k as f64 * 5e-6;
            if tail(e) < e {
                scan = e;
                break;
            }
        }
        assert!(eps <= scan && scan - eps <= 1e-5, "{eps} vs {scan}");
    }

    #[test]
    fn continuity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Agent spacing 2e-4, comparable to the smallest delta.
        let s = DensitySpec::uniform(0.0, 10.0)
            .unwrap()
            .discretize(50_000, QuantileRule::Midpoint)
            .unwrap();
        let zero = continuity_probe(&s, 0.0, 3, &mut rng).unwrap();
        assert_eq!(zero.response, 0.0);
        let mut last = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4] {
            let r = continuity_probe(&s, delta, 3, &mut rng).unwrap();
            assert!(r.within_bound(), "{r:?}");
            assert!(r.response <= last);
            last = r.response;
        }
        let gap = weighted(&[(0.0, 1.0), (0.05, 1.0), (3.0, 1.0)]);
        assert!(matches!(
            continuity_probe(&gap, 1e-3, 1, &mut rng),
            Err(Error::NotRegular(_))
        ));
    }

    #[test]
    fn sup_distance_aligns_cells() {
        assert_eq!(sup_distance(&[1.0, 3.0], &[1.0, 1.5, 3.0, 3.0]), 0.5);
        assert_eq!(sup_distance(&[2.0], &[1.0, 2.0, 4.0]), 2.0);
        assert_eq!(sup_distance(&[5.0, 7.0], &[5.0, 7.0]), 0.0);
    }

    #[test]
    fn refinement_examples() {
        let d = DensitySpec::uniform(0.0, 6.0).unwrap();
        let r = refine_compare(&d, &[10, 100, 1000], 0).unwrap();
        let Refinement::Applied { errors, .. } = &r else {
            panic!("{r:?}")
        };
        assert!(errors[0].1 <= 6.0 / 10.0 && errors[1].1 <= 6.0 / 100.0);
        assert_eq!(errors[2].1, 0.0);

        let narrow = DensitySpec::uniform(0.0, 1.5).unwrap();
        assert!(matches!(
            refine_compare(&narrow, &[10, 100], 3).unwrap(),
            Refinement::NotApplicable { time: 0, .. }
        ));
        assert!(refine_compare(&d, &[100, 10], 1).is_err());
    }
}
