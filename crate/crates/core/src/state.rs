//! Weighted, sorted opinion vectors and the interaction structure they induce.
//!
//! Two agents interact when their opinions differ by strictly less than the
//! confidence radius, which is fixed to 1. Callers working with a radius
//! `eps` rescale opinions by `1 / eps` first.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction radius. All opinions are expressed in units of this radius.
pub const CONFIDENCE_RADIUS: f64 = 1.0;

/// Returns true when opinions `a` and `b` are neighbors (`|a - b| < 1`).
///
/// No tolerance is applied: a separation of exactly 1 is not an interaction.
#[inline]
pub fn connected(a: f64, b: f64) -> bool {
    (a - b).abs() < CONFIDENCE_RADIUS
}

/// Sorted weighted opinion vector at a given time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionState {
    opinions: Vec<f64>,
    weights: Vec<f64>,
    time: u64,
}

impl OpinionState {
    /// Builds a validated state at time 0.
    pub fn new(opinions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate(&opinions, &weights)?;
        Ok(Self {
            opinions,
            weights,
            time: 0,
        })
    }

    /// Unit-weight agents.
    pub fn unweighted(opinions: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; opinions.len()];
        Self::new(opinions, weights)
    }

    /// Sorts `(opinion, weight)` pairs before validating. Ties keep their
    /// input order.
    pub fn from_unsorted(mut agents: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(index) = agents.iter().position(|(x, _)| !x.is_finite()) {
            return Err(Error::NonFiniteOpinion { index });
        }
        agents.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (opinions, weights) = agents.into_iter().unzip();
        Self::new(opinions, weights)
    }

    pub fn with_time(mut self, time: u64) -> Self {
        self.time = time;
        self
    }

    /// Internal constructor for dynamics output that is sorted and valid by
    /// construction.
    pub(crate) fn from_parts_unchecked(opinions: Vec<f64>, weights: Vec<f64>, time: u64) -> Self {
        debug_assert!(validate(&opinions, &weights).is_ok());
        Self {
            opinions,
            weights,
            time,
        }
    }

    pub fn opinions(&self) -> &[f64] {
        &self.opinions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    /// Always false for a validated state; provided for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn min_opinion(&self) -> f64 {
        self.opinions[0]
    }

    pub fn max_opinion(&self) -> f64 {
        self.opinions[self.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.max_opinion() - self.min_opinion()
    }

    /// Sub-state made of the agents in `range`, keeping the time stamp.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.len(),
            });
        }
        Ok(Self {
            opinions: self.opinions[range.clone()].to_vec(),
            weights: self.weights[range].to_vec(),
            time: self.time,
        })
    }

    /// Same agents, weights rescaled so they sum to 1.
    pub fn normalized(&self) -> Self {
        let total = self.total_weight();
        Self {
            opinions: self.opinions.clone(),
            weights: self.weights.iter().map(|w| w / total).collect(),
            time: self.time,
        }
    }

    /// Maximal index range `[lo, hi]` (inclusive) of agents connected to `i`.
    pub fn neighbor_window(&self, i: usize) -> Result<(usize, usize)> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        let x = &self.opinions;
        let xi = x[i];
        // Window membership is contiguous on a sorted vector because
        // floating-point subtraction is monotone in each argument.
        let lo = x[..i].partition_point(|&xj| !connected(xi, xj));
        let hi = i + x[i..].partition_point(|&xj| connected(xi, xj)) - 1;
        Ok((lo, hi))
    }

    /// All neighbor windows in one O(n) two-pointer sweep.
    pub fn neighbor_windows(&self) -> Vec<(usize, usize)> {
        let x = &self.opinions;
        let n = x.len();
        let mut out = Vec::with_capacity(n);
        let (mut lo, mut hi) = (0usize, 0usize);
        for i in 0..n {
            while !connected(x[i], x[lo]) {
                lo += 1;
            }
            if hi < i {
                hi = i;
            }
            while hi + 1 < n && connected(x[i], x[hi + 1]) {
                hi += 1;
            }
            out.push((lo, hi));
        }
        out
    }

    /// Maximal runs of agents with every consecutive gap below 1. Agents in
    /// different runs can never interact again.
    pub fn decoupled_groups(&self) -> Vec<Range<usize>> {
        split_ranges(&self.opinions, |a, b| !connected(a, b))
    }
}

/// Splits `0..x.len()` wherever `cut(x[k], x[k + 1])` holds.
pub(crate) fn split_ranges(x: &[f64], cut: impl Fn(f64, f64) -> bool) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for k in 1..x.len() {
        if cut(x[k - 1], x[k]) {
            ranges.push(start..k);
            start = k;
        }
    }
    if !x.is_empty() {
        ranges.push(start..x.len());
    }
    ranges
}

fn validate(opinions: &[f64], weights: &[f64]) -> Result<()> {
    if opinions.is_empty() {
        return Err(Error::EmptyState);
    }
    if opinions.len() != weights.len() {
        return Err(Error::LengthMismatch {
            opinions: opinions.len(),
            weights: weights.len(),
        });
    }
    for (index, x) in opinions.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteOpinion { index });
        }
        if index > 0 && *x < opinions[index - 1] {
            return Err(Error::Unsorted { index });
        }
    }
    for (index, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidWeight { index, value: w });
        }
    }
    Ok(())
}

/// Running sum with Neumaier compensation. Differences of two snapshots give
/// a window sum whose rounding error is relative to the window, not to the
/// whole prefix.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    err: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.err += (self.sum - t) + v;
        } else {
            self.err += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn since(&self, earlier: &CompensatedSum) -> f64 {
        (self.sum - earlier.sum) + (self.err - earlier.err)
    }

    #[cfg(test)]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Prefix sums of `values` restarted at each decoupled group, so that every
/// window sum only involves agents of its own group.
pub(crate) struct GroupPrefix {
    prefix: Vec<CompensatedSum>,
    /// Offset of agent `k` into `prefix`: group `g` occupies
    /// `prefix[start_g + g ..= end_g + g]`.
    group_of: Vec<usize>,
}

impl GroupPrefix {
    pub(crate) fn new(
        groups: &[Range<usize>],
        n: usize,
        mut value: impl FnMut(usize) -> f64,
    ) -> Self {
        let mut prefix = Vec::with_capacity(n + groups.len());
        let mut group_of = vec![0; n];
        for (g, range) in groups.iter().enumerate() {
            let mut acc = CompensatedSum::default();
            prefix.push(acc);
            for k in range.clone() {
                acc.add(value(k));
                prefix.push(acc);
                group_of[k] = g;
            }
        }
        Self { prefix, group_of }
    }

    /// Sum over the inclusive index window `[lo, hi]`, which must lie in one
    /// group.
    #[inline]
    pub(crate) fn window(&self, lo: usize, hi: usize) -> f64 {
        let g = self.group_of[lo];
        debug_assert_eq!(g, self.group_of[hi]);
        self.prefix[hi + 1 + g].since(&self.prefix[lo + g])
    }
}

/// Σ_{j in window(i)} w_j v_j for every agent.
pub(crate) fn window_weighted_sums(
    state: &OpinionState,
    windows: &[(usize, usize)],
    values: &[f64],
) -> Vec<f64> {
    let groups = state.decoupled_groups();
    let w = state.weights();
    let prefix = GroupPrefix::new(&groups, state.len(), |k| w[k] * values[k]);
    windows
        .iter()
        .map(|&(lo, hi)| prefix.window(lo, hi))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: &[f64]) -> OpinionState {
        OpinionState::unweighted(x.to_vec()).unwrap()
    }

    #[test]
    fn window_examples() {
        let s = st(&[0.0, 0.5, 1.0]);
        assert_eq!(s.neighbor_window(0).unwrap(), (0, 1));
        assert_eq!(s.neighbor_window(1).unwrap(), (0, 2));
        assert_eq!(s.neighbor_window(2).unwrap(), (1, 2));
        let s = st(&[0.0, 1.0]);
        assert_eq!(s.neighbor_window(0).unwrap(), (0, 0));
        assert!(matches!(
            s.neighbor_window(2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn two_pointer_matches_binary_search() {
        let s = st(&[0.0, 0.0, 0.3, 0.99, 1.0, 1.5, 2.2, 4.0, 4.0, 4.9999]);
        let all = s.neighbor_windows();
        for (i, w) in all.iter().enumerate() {
            assert_eq!(*w, s.neighbor_window(i).unwrap(), "agent {i}");
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            OpinionState::unweighted(vec![]),
            Err(Error::EmptyState)
        ));
        assert!(matches!(
            OpinionState::unweighted(vec![1.0, 0.0]),
            Err(Error::Unsorted { index: 1 })
        ));
        assert!(matches!(
            OpinionState::new(vec![0.0, 1.0], vec![1.0, -2.0]),
            Err(Error::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            OpinionState::new(vec![0.0], vec![1.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            OpinionState::unweighted(vec![f64::NAN]),
            Err(Error::NonFiniteOpinion { index: 0 })
        ));
    }

    #[test]
    fn groups_split_at_unit_gaps() {
        let s = st(&[0.0, 0.5, 2.0]);
        assert_eq!(s.decoupled_groups(), vec![0..2, 2..3]);
        let s = st(&[0.0, 0.9, 1.8]);
        assert_eq!(s.decoupled_groups(), vec![0..3]);
        let s = st(&[0.0, 1.0]);
        assert_eq!(s.decoupled_groups(), vec![0..1, 1..2]);
    }

    #[test]
    fn compensated_window_sums_are_accurate() {
        // Large prefix followed by small values: naive prefix differences lose
        // the small window entirely.
        let mut acc = CompensatedSum::default();
        acc.add(1e17);
        let before = acc;
        acc.add(1.0);
        acc.add(2.0);
        assert_eq!(acc.since(&before), 3.0);
        assert_eq!(acc.value(), 1e17 + 3.0);
    }
}
