//! Synchronous bounded-confidence update and the simulation driver.
//!
//! Every agent moves to the weighted average of the opinions within distance
//! strictly less than 1 of its own. On a sorted state each neighborhood is a
//! contiguous index window, so one step costs O(n) with two moving pointers
//! and prefix sums.
//!
//! Arithmetic convention shared by [`step`] and [`step_naive`]: within each
//! decoupled group the prefix sums run left to right over `w * (x - anchor)`
//! with `anchor` the first opinion of the group, using compensated
//! summation. Both paths therefore produce bitwise-identical output, and a
//! group holding a single value is mapped to exactly that value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{connected, CompensatedSum, GroupPrefix, OpinionState};

pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Largest per-step opinion change (and intra-cluster spread) still
    /// counted as stationary.
    pub fixed_point_tol: f64,
    pub max_steps: u64,
    /// Keep a full snapshot every `record_every` steps.
    pub record_every: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
            max_steps: DEFAULT_MAX_STEPS,
            record_every: 1,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_point_tol >= 0.0 && self.fixed_point_tol.is_finite()) {
            return Err(Error::param("fixed_point_tol", "must be finite and >= 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::param("max_steps", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be >= 1"));
        }
        Ok(())
    }

    /// Parameters that record only the initial and final states.
    pub fn sparse() -> Self {
        Self {
            record_every: u64::MAX,
            ..Self::default()
        }
    }
}

/// Summary of one update `x(t) -> x(t+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Time of the state produced by the step.
    pub time: u64,
    pub max_change: f64,
    pub min_opinion: f64,
    pub max_opinion: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Recorded states, strictly increasing in time.
    pub snapshots: Vec<OpinionState>,
    /// One entry per executed step.
    pub step_stats: Vec<StepStats>,
}

impl Trajectory {
    fn record(&mut self, state: &OpinionState) {
        if self.snapshots.last().map(|s| s.time()) != Some(state.time()) {
            self.snapshots.push(state.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    FixedPoint,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub final_state: OpinionState,
    pub converged: bool,
    pub convergence_time: Option<u64>,
    pub termination: Termination,
}

/// Finishes a step from per-agent window sums.
///
/// The exact average lies within the window's opinion range, and exact
/// dynamics preserve order. Rounding can break either by an ulp, so the
/// result is clamped to the window and made nondecreasing.
fn finish_step(
    state: &OpinionState,
    windows: impl Iterator<Item = (usize, usize, f64, f64, f64)>,
) -> OpinionState {
    let x = state.opinions();
    let mut next = Vec::with_capacity(x.len());
    let mut prev = f64::NEG_INFINITY;
    for (lo, hi, anchor, weighted_dev, weight) in windows {
        let avg = (anchor + weighted_dev / weight).clamp(x[lo], x[hi]);
        let v = avg.max(prev);
        next.push(v);
        prev = v;
    }
    OpinionState::from_parts_unchecked(next, state.weights().to_vec(), state.time() + 1)
}

/// One synchronous update in O(n).
pub fn step(state: &OpinionState) -> OpinionState {
    let x = state.opinions();
    let w = state.weights();
    let groups = state.decoupled_groups();
    let mut anchor = vec![0.0; x.len()];
    for g in &groups {
        anchor[g.clone()].fill(x[g.start]);
    }
    let dev = GroupPrefix::new(&groups, x.len(), |k| w[k] * (x[k] - anchor[k]));
    let mass = GroupPrefix::new(&groups, x.len(), |k| w[k]);
    let windows = state.neighbor_windows();
    finish_step(
        state,
        windows
            .into_iter()
            .enumerate()
            .map(|(i, (lo, hi))| (lo, hi, anchor[i], dev.window(lo, hi), mass.window(lo, hi))),
    )
}

/// Reference update by explicit all-pairs neighbor scan, O(n^2).
///
/// Membership is decided independently of the window machinery in
/// [`step`]; the sums follow the same accumulation order so results agree
/// bitwise.
pub fn step_naive(state: &OpinionState) -> OpinionState {
    let x = state.opinions();
    let w = state.weights();
    let n = x.len();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let members: Vec<usize> = (0..n).filter(|&j| connected(x[i], x[j])).collect();
        let lo = members[0];
        let hi = members[members.len() - 1];
        assert_eq!(
            members.len(),
            hi - lo + 1,
            "neighborhood of agent {i} is not contiguous"
        );

        let mut start = i;
        while start > 0 && connected(x[start - 1], x[start]) {
            start -= 1;
        }
        let anchor = x[start];
        let (mut dev, mut mass) = (CompensatedSum::default(), CompensatedSum::default());
        let (mut dev_lo, mut mass_lo) = (dev, mass);
        for j in start..=hi {
            if j == lo {
                dev_lo = dev;
                mass_lo = mass;
            }
            dev.add(w[j] * (x[j] - anchor));
            mass.add(w[j]);
        }
        rows.push((lo, hi, anchor, dev.since(&dev_lo), mass.since(&mass_lo)));
    }
    finish_step(state, rows.into_iter())
}

fn max_abs_change(a: &OpinionState, b: &OpinionState) -> f64 {
    a.opinions()
        .iter()
        .zip(b.opinions())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

/// True iff the opinions split into groups of spread at most `tol` that are
/// pairwise at least `1 - tol` apart.
pub fn is_fixed_point(state: &OpinionState, tol: f64) -> bool {
    let x = state.opinions();
    let mut group_start = x[0];
    for k in 1..x.len() {
        let gap = x[k] - x[k - 1];
        if gap > tol {
            if gap < 1.0 - tol {
                return false;
            }
            group_start = x[k];
        } else if x[k] - group_start > tol {
            return false;
        }
    }
    true
}

/// Iterates [`step`] until the state is a fixed point or `max_steps` is
/// reached.
///
/// A state `x(t)` is accepted as converged when it passes
/// [`is_fixed_point`] and the following update moves no opinion by more
/// than the tolerance; `convergence_time` is then `t`.
pub fn simulate(state: &OpinionState, params: &SimParams) -> Result<(SimResult, Trajectory)> {
    params.validate()?;
    let tol = params.fixed_point_tol;
    let start = state.time();
    let mut traj = Trajectory::default();
    let mut current = state.clone();
    loop {
        let elapsed = current.time() - start;
        if elapsed.is_multiple_of(params.record_every) {
            traj.record(&current);
        }
        let next = step(&current);
        let change = max_abs_change(&current, &next);
        if change <= tol && is_fixed_point(&current, tol) {
            traj.record(&current);
            let t = current.time();
            return Ok((
                SimResult {
                    final_state: current,
                    converged: true,
                    convergence_time: Some(t),
                    termination: Termination::FixedPoint,
                },
                traj,
            ));
        }
        if elapsed >= params.max_steps {
            traj.record(&current);
            return Ok((
                SimResult {
                    final_state: current,
                    converged: false,
                    convergence_time: None,
                    termination: Termination::MaxSteps,
                },
                traj,
            ));
        }
        traj.step_stats.push(StepStats {
            time: next.time(),
            max_change: change,
            min_opinion: next.min_opinion(),
            max_opinion: next.max_opinion(),
        });
        current = next;
    }
}

/// Runs exactly `steps` updates, recording every `record_every`-th state and
/// the last one.
pub fn evolve(state: &OpinionState, steps: u64, record_every: u64) -> Result<Trajectory> {
    if record_every == 0 {
        return Err(Error::param("record_every", "must be >= 1"));
    }
    let mut traj = Trajectory::default();
    let mut current = state.clone();
    traj.record(&current);
    for k in 1..=steps {
        let next = step(&current);
        traj.step_stats.push(StepStats {
            time: next.time(),
            max_change: max_abs_change(&current, &next),
            min_opinion: next.min_opinion(),
            max_opinion: next.max_opinion(),
        });
        current = next;
        if k % record_every == 0 {
            traj.record(&current);
        }
    }
    traj.record(&current);
    Ok(traj)
}

/// State after `steps` updates without keeping a trajectory.
pub fn advance(state: &OpinionState, steps: u64) -> OpinionState {
    let mut current = state.clone();
    for _ in 0..steps {
        current = step(&current);
    }
    current
}
