//! Cluster extraction and equilibrium certification.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dynamics::{is_fixed_point, SimResult, Termination, Trajectory};
use crate::error::{Error, Result};
use crate::state::{split_ranges, OpinionState};

pub const DEFAULT_GAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Weighted mean opinion of the members.
    pub position: f64,
    pub weight: f64,
    pub members: Range<usize>,
}

/// Partitions agents at every consecutive gap strictly larger than
/// `gap_threshold`.
pub fn detect_clusters(state: &OpinionState, gap_threshold: f64) -> Vec<Cluster> {
    let x = state.opinions();
    let w = state.weights();
    split_ranges(x, |a, b| b - a > gap_threshold)
        .into_iter()
        .map(|members| {
            let anchor = x[members.start];
            let (mut mass, mut dev) = (0.0, 0.0);
            for k in members.clone() {
                mass += w[k];
                dev += w[k] * (x[k] - anchor);
            }
            Cluster {
                position: anchor + dev / mass,
                weight: mass,
                members,
            }
        })
        .collect()
}

/// Index ranges separated by gaps of at least 1.
pub fn decoupled_groups(state: &OpinionState) -> Vec<Range<usize>> {
    state.decoupled_groups()
}

/// First recorded time whose snapshot is a fixed point.
pub fn convergence_time(trajectory: &Trajectory, tol: f64) -> Option<u64> {
    trajectory
        .snapshots
        .iter()
        .find(|s| is_fixed_point(s, tol))
        .map(|s| s.time())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSource {
    pub convergence_time: Option<u64>,
    pub termination: Termination,
    pub agents: usize,
}

/// A certified fixed point: clusters pairwise at least `1 - tol` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub clusters: Vec<Cluster>,
    pub source: Option<EquilibriumSource>,
}

impl Equilibrium {
    /// Certifies the final state of a converged run.
    pub fn from_result(result: &SimResult, tol: f64) -> Result<Self> {
        if !result.converged {
            return Err(Error::NotEquilibrium("simulation did not converge".into()));
        }
        let mut eq = Self::from_state(&result.final_state, tol)?;
        eq.source = Some(EquilibriumSource {
            convergence_time: result.convergence_time,
            termination: result.termination,
            agents: result.final_state.len(),
        });
        Ok(eq)
    }

    pub fn from_state(state: &OpinionState, tol: f64) -> Result<Self> {
        if !is_fixed_point(state, tol) {
            return Err(Error::NotEquilibrium("state is not a fixed point".into()));
        }
        Ok(Self {
            clusters: detect_clusters(state, DEFAULT_GAP_THRESHOLD),
            source: None,
        })
    }

    /// Synthetic equilibrium from `(position, weight)` pairs.
    pub fn from_clusters(clusters: &[(f64, f64)], tol: f64) -> Result<Self> {
        let state = OpinionState::from_unsorted(clusters.to_vec())?;
        let eq = Self::from_state(&state, tol)?;
        if eq.clusters.len() != clusters.len() {
            return Err(Error::NotEquilibrium(
                "cluster positions must be distinct".into(),
            ));
        }
        Ok(eq)
    }

    pub fn total_weight(&self) -> f64 {
        self.clusters.iter().map(|c| c.weight).sum()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.position).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.weight).collect()
    }

    /// One agent per cluster carrying the cluster weight. Agents sharing an
    /// opinion evolve as a single agent of their summed weight.
    pub fn as_state(&self) -> OpinionState {
        OpinionState::new(self.positions(), self.weights()).expect("clusters form a valid state")
    }

    pub fn min_separation(&self) -> Option<f64> {
        self.clusters
            .windows(2)
            .map(|p| p[1].position - p[0].position)
            .reduce(f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, SimParams};

    fn st(x: &[f64]) -> OpinionState {
        OpinionState::unweighted(x.to_vec()).unwrap()
    }

    #[test]
    fn cluster_examples() {
        let c = detect_clusters(&st(&[0.0, 0.0, 2.0, 2.0, 2.0]), 0.5);
        assert_eq!(c.len(), 2);
        assert_eq!(
            (c[0].position, c[0].weight, c[0].members.clone()),
            (0.0, 2.0, 0..2)
        );
        assert_eq!(
            (c[1].position, c[1].weight, c[1].members.clone()),
            (2.0, 3.0, 2..5)
        );

        let single = detect_clusters(&OpinionState::new(vec![3.25], vec![0.7]).unwrap(), 0.5);
        assert_eq!(single.len(), 1);
        assert_eq!((single[0].position, single[0].weight), (3.25, 0.7));
    }

    #[test]
    fn decoupled_examples() {
        assert_eq!(decoupled_groups(&st(&[0.0, 0.5, 2.0])), vec![0..2, 2..3]);
        assert_eq!(decoupled_groups(&st(&[0.0, 0.9, 1.8])), vec![0..3]);
    }

    #[test]
    fn convergence_time_examples() {
        let (_, traj) = simulate(&st(&[0.1, 0.1, 1.0, 1.9, 1.9]), &SimParams::default()).unwrap();
        assert_eq!(convergence_time(&traj, 1e-12), Some(3));
        let (_, traj) = simulate(&st(&[0.0, 2.0]), &SimParams::default()).unwrap();
        assert_eq!(convergence_time(&traj, 1e-12), Some(0));
        let unfinished = Trajectory {
            snapshots: vec![st(&[0.0, 0.5])],
            step_stats: vec![],
        };
        assert_eq!(convergence_time(&unfinished, 1e-12), None);
    }

    #[test]
    fn certification() {
        let eq = Equilibrium::from_clusters(&[(1.5, 1.0), (0.0, 2.0)], 1e-12).unwrap();
        assert_eq!(eq.positions(), vec![0.0, 1.5]);
        assert_eq!(eq.weights(), vec![2.0, 1.0]);
        assert!(Equilibrium::from_clusters(&[(0.0, 1.0), (0.5, 1.0)], 1e-12).is_err());
        let (res, _) = simulate(&st(&[0.0, 0.2, 3.0, 3.4]), &SimParams::default()).unwrap();
        let eq = Equilibrium::from_result(&res, 1e-12).unwrap();
        assert_eq!(eq.clusters.len(), 2);
        assert_eq!(eq.total_weight(), 4.0);
        assert!(eq.min_separation().unwrap() >= 1.0);
    }
}
