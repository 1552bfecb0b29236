//! Equilibrium stability with respect to a perturbing agent of vanishing
//! weight.
//!
//! Two clusters of weights `W_A`, `W_B` at distance `d < 2` are stable when
//! either the weights are equal and `d >= 2`, or they differ and
//! `d > 1 + min(W_A, W_B) / max(W_A, W_B)`. The second form is equivalent to
//! one of the clusters lying more than 1 away from the pair's center of mass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{detect_clusters, Cluster, Equilibrium, DEFAULT_GAP_THRESHOLD};
use crate::dynamics::{simulate, SimParams, Trajectory};
use crate::error::{Error, Result};
use crate::state::OpinionState;

pub const DEFAULT_GRID_STEP: f64 = 0.01;
pub const DEFAULT_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_STABILITY_EPS: f64 = 1e-2;
/// A bridge between two macro-groups may carry at most this fraction of the
/// lighter group's weight.
pub const BRIDGE_WEIGHT_FRACTION: f64 = 0.05;
/// Gap threshold separating macro-groups from bridge agents.
pub const MACRO_GAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairVerdict {
    Stable,
    Unstable,
    /// Unequal weights at exactly `d = 1 + min/max`. Unstable in theory, but
    /// the perturbation argument is degenerate there.
    Boundary,
}

/// Stability threshold on the distance for a pair of cluster weights.
pub fn pair_bound(w_a: f64, w_b: f64) -> f64 {
    if w_a == w_b {
        2.0
    } else {
        1.0 + w_a.min(w_b) / w_a.max(w_b)
    }
}

pub fn pair_condition(w_a: f64, w_b: f64, d: f64) -> Result<PairVerdict> {
    for (name, v) in [("w_a", w_a), ("w_b", w_b), ("d", d)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param(
                name,
                format!("must be positive and finite, got {v}"),
            ));
        }
    }
    let bound = pair_bound(w_a, w_b);
    let verdict = if w_a == w_b {
        if d >= bound {
            PairVerdict::Stable
        } else {
            PairVerdict::Unstable
        }
    } else if d > bound {
        PairVerdict::Stable
    } else if d == bound {
        PairVerdict::Boundary
    } else {
        PairVerdict::Unstable
    };
    Ok(verdict)
}

/// True when one of the two clusters is more than 1 away from their center
/// of mass.
pub fn center_of_mass_test(x_a: f64, x_b: f64, w_a: f64, w_b: f64) -> bool {
    let m = (w_a * x_a + w_b * x_b) / (w_a + w_b);
    (m - x_a).abs().max((m - x_b).abs()) > 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityStatus {
    Stable,
    Unstable,
    /// Every violation sits exactly on the unequal-weight bound.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub clusters: (usize, usize),
    pub distance: f64,
    pub bound: f64,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub status: StabilityStatus,
    pub violations: Vec<Violation>,
}

impl StabilityVerdict {
    pub fn is_stable(&self) -> bool {
        self.status == StabilityStatus::Stable
    }
}

/// Analytic classification of an equilibrium. Pairs at distance 2 or more
/// cannot both reach a perturbing agent and are skipped.
pub fn classify(eq: &Equilibrium) -> StabilityVerdict {
    let c = &eq.clusters;
    let mut violations = Vec::new();
    for a in 0..c.len() {
        for b in a + 1..c.len() {
            let d = c[b].position - c[a].position;
            if d >= 2.0 {
                break;
            }
            let verdict = pair_condition(c[a].weight, c[b].weight, d)
                .expect("cluster weights and distances are positive");
            if verdict != PairVerdict::Stable {
                violations.push(Violation {
                    clusters: (a, b),
                    distance: d,
                    bound: pair_bound(c[a].weight, c[b].weight),
                    at_boundary: verdict == PairVerdict::Boundary,
                });
            }
        }
    }
    let status = if violations.is_empty() {
        StabilityStatus::Stable
    } else if violations.iter().all(|v| v.at_boundary) {
        StabilityStatus::Boundary
    } else {
        StabilityStatus::Unstable
    };
    StabilityVerdict { status, violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub perturber_position: f64,
    pub delta: f64,
    /// Σ_c W_c |x_c - x'_c| over the original clusters.
    pub displacement: f64,
    pub merged: bool,
    /// False when the perturbed run hit `max_steps`.
    pub converged: bool,
}

/// Inserts an agent of weight `delta` at `x0`, runs to a fixed point, drops
/// the perturber and measures how far the original clusters moved.
pub fn perturb_and_measure(
    eq: &Equilibrium,
    x0: f64,
    delta: f64,
    params: &SimParams,
) -> Result<PerturbationResult> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::param("delta", "must be positive and finite"));
    }
    if !x0.is_finite() {
        return Err(Error::param("x0", "must be finite"));
    }
    let positions = eq.positions();
    let weights = eq.weights();
    let p = positions.partition_point(|&x| x < x0);
    let mut opinions = positions.clone();
    let mut w = weights.clone();
    opinions.insert(p, x0);
    w.insert(p, delta);
    let perturbed = OpinionState::new(opinions, w)?;

    let params = SimParams {
        record_every: u64::MAX,
        ..*params
    };
    let (result, _) = simulate(&perturbed, &params)?;
    let mut after = result.final_state.opinions().to_vec();
    after.remove(p);

    let displacement = positions
        .iter()
        .zip(&after)
        .zip(&weights)
        .map(|((x, y), w)| w * (x - y).abs())
        .sum();
    let remaining = OpinionState::new(after, weights)?;
    let merged = detect_clusters(&remaining, DEFAULT_GAP_THRESHOLD).len() < eq.clusters.len();
    Ok(PerturbationResult {
        perturber_position: x0,
        delta,
        displacement,
        merged,
        converged: result.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub grid_step: f64,
    /// Strictly decreasing perturber weights.
    pub deltas: Vec<f64>,
    pub stability_eps: f64,
    pub params: SimParams,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            deltas: DEFAULT_DELTAS.to_vec(),
            stability_eps: DEFAULT_STABILITY_EPS,
            params: SimParams::sparse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmpiricalVerdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupRow {
    pub delta: f64,
    pub sup_displacement: f64,
    pub argsup: f64,
    pub any_merged: bool,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStability {
    pub verdict: EmpiricalVerdict,
    pub analytic: StabilityStatus,
    pub rows: Vec<SupRow>,
}

/// Perturber positions from `min - 1` to `max + 1` in steps of `grid_step`.
pub fn perturber_grid(eq: &Equilibrium, grid_step: f64) -> Vec<f64> {
    let lo = eq.clusters[0].position - 1.0;
    let hi = eq.clusters[eq.clusters.len() - 1].position + 1.0;
    let count = ((hi - lo) / grid_step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| lo + k as f64 * grid_step).collect()
}

/// Estimates `sup_x0 Δ` for each perturber weight and decides stability from
/// its decay.
///
/// Stable: the sup is nonincreasing along the schedule and ends below
/// `stability_eps`. Unstable: it ends at or above `stability_eps`. Anything
/// else, and any equilibrium sitting exactly on a bound, is inconclusive.
pub fn empirical_stability(
    eq: &Equilibrium,
    config: &EmpiricalConfig,
) -> Result<EmpiricalStability> {
    if !(config.grid_step.is_finite() && config.grid_step > 0.0) {
        return Err(Error::param("grid_step", "must be positive"));
    }
    if config.deltas.is_empty() || config.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::param(
            "deltas",
            "must be a nonempty list of positive values",
        ));
    }
    if config.deltas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::param("deltas", "must be strictly decreasing"));
    }
    let grid = perturber_grid(eq, config.grid_step);
    let tasks: Vec<(usize, f64)> = (0..config.deltas.len())
        .flat_map(|k| grid.iter().map(move |&x0| (k, x0)))
        .collect();
    let results: Vec<PerturbationResult> = tasks
        .par_iter()
        .map(|&(k, x0)| perturb_and_measure(eq, x0, config.deltas[k], &config.params))
        .collect::<Result<_>>()?;

    let rows: Vec<SupRow> = results
        .chunks(grid.len())
        .zip(&config.deltas)
        .map(|(chunk, &delta)| {
            let best = chunk.iter().fold(&chunk[0], |b, r| {
                if r.displacement > b.displacement {
                    r
                } else {
                    b
                }
            });
            SupRow {
                delta,
                sup_displacement: best.displacement,
                argsup: best.perturber_position,
                any_merged: chunk.iter().any(|r| r.merged),
                all_converged: chunk.iter().all(|r| r.converged),
            }
        })
        .collect();

    let analytic = classify(eq).status;
    let last = rows[rows.len() - 1].sup_displacement;
    let nonincreasing = rows
        .windows(2)
        .all(|p| p[1].sup_displacement <= p[0].sup_displacement);
    let verdict = if analytic == StabilityStatus::Boundary || rows.iter().any(|r| !r.all_converged)
    {
        EmpiricalVerdict::Inconclusive
    } else if last >= config.stability_eps {
        EmpiricalVerdict::Unstable
    } else if nonincreasing {
        EmpiricalVerdict::Stable
    } else {
        EmpiricalVerdict::Inconclusive
    };
    Ok(EmpiricalStability {
        verdict,
        analytic,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastablePhase {
    pub start: u64,
    pub end: u64,
    pub gap_start: f64,
    pub gap_end: f64,
    /// Largest bridge weight seen during the phase.
    pub bridge_weight: f64,
    /// The two groups end up in one cluster by the last snapshot.
    pub ended_in_merge: bool,
}

struct MacroPair {
    left: Cluster,
    right: Cluster,
    bridge_weight: f64,
}

/// Two heavy groups more than 1 and less than 2 apart, with all remaining
/// mass strictly between them and light enough to count as a bridge.
fn macro_pair(state: &OpinionState) -> Option<MacroPair> {
    let clusters = detect_clusters(state, MACRO_GAP);
    if clusters.len() < 3 {
        return None;
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[b].weight.total_cmp(&clusters[a].weight));
    let (a, b) = (order[0].min(order[1]), order[0].max(order[1]));
    let (left, right) = (&clusters[a], &clusters[b]);
    if a != 0 || b != clusters.len() - 1 {
        return None;
    }
    let gap = right.position - left.position;
    if !(gap > 1.0 && gap < 2.0) {
        return None;
    }
    let bridge_weight: f64 = clusters[a + 1..b].iter().map(|c| c.weight).sum();
    if bridge_weight >= BRIDGE_WEIGHT_FRACTION * left.weight.min(right.weight) {
        return None;
    }
    Some(MacroPair {
        left: left.clone(),
        right: right.clone(),
        bridge_weight,
    })
}

/// Finds stretches of at least `min_len` steps where two macro-groups sit
/// 1 to 2 apart, joined only by a light bridge, and drift by less than
/// `drift_eps` per step.
pub fn metastable_scan(traj: &Trajectory, drift_eps: f64, min_len: u64) -> Vec<MetastablePhase> {
    let snaps = &traj.snapshots;
    let pairs: Vec<Option<MacroPair>> = snaps.iter().map(macro_pair).collect();
    let last = match snaps.last() {
        Some(s) => s,
        None => return Vec::new(),
    };
    let final_clusters = detect_clusters(last, DEFAULT_GAP_THRESHOLD);

    let mut phases = Vec::new();
    let mut open: Option<(usize, usize, f64)> = None;
    for k in 1..=snaps.len() {
        let slow = k < snaps.len()
            && match (&pairs[k - 1], &pairs[k]) {
                (Some(p), Some(q)) => {
                    let dt = (snaps[k].time() - snaps[k - 1].time()) as f64;
                    let drift = (q.left.position - p.left.position)
                        .abs()
                        .max((q.right.position - p.right.position).abs())
                        / dt;
                    drift < drift_eps
                }
                _ => false,
            };
        if slow {
            let bw = pairs[k].as_ref().unwrap().bridge_weight;
            open = match open {
                Some((s, _, b)) => Some((s, k, b.max(bw))),
                None => Some((
                    k - 1,
                    k,
                    bw.max(pairs[k - 1].as_ref().unwrap().bridge_weight),
                )),
            };
        } else if let Some((s, e, bridge_weight)) = open.take() {
            if snaps[e].time() - snaps[s].time() >= min_len {
                let first = pairs[s].as_ref().unwrap();
                let end = pairs[e].as_ref().unwrap();
                let lo = first.left.members.start;
                let hi = first.right.members.end - 1;
                let ended_in_merge = final_clusters
                    .iter()
                    .any(|c| c.members.contains(&lo) && c.members.contains(&hi));
                phases.push(MetastablePhase {
                    start: snaps[s].time(),
                    end: snaps[e].time(),
                    gap_start: first.right.position - first.left.position,
                    gap_end: end.right.position - end.left.position,
                    bridge_weight,
                    ended_in_merge,
                });
            }
        }
    }
    phases
}
