//! Reproducible studies: cluster-count sweeps, edge-independent spacing on a
//! long interval, and the named preset scenarios.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{detect_clusters, Cluster, Equilibrium, DEFAULT_GAP_THRESHOLD};
use crate::continuum::DensitySpec;
use crate::dynamics::{is_fixed_point, simulate, step, SimParams};
use crate::error::{Error, Result};
use crate::stability::{
    classify, empirical_stability, metastable_scan, pair_bound, EmpiricalConfig, EmpiricalVerdict,
    MetastablePhase, StabilityStatus,
};
use crate::state::OpinionState;

pub const DEFAULT_AGENTS_PER_UNIT: f64 = 1000.0;
/// Resolution for fine sweeps.
pub const DENSE_AGENTS_PER_UNIT: f64 = 5000.0;

/// `n` agents with unit weights uniformly spaced on `[0, length]`.
pub fn uniform_spaced(length: f64, n: usize) -> Result<OpinionState> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if n == 1 {
        return OpinionState::unweighted(vec![0.5 * length]);
    }
    let h = length / (n - 1) as f64;
    OpinionState::unweighted((0..n).map(|i| i as f64 * h).collect())
}

fn agents_for(length: f64, agents_per_unit: f64) -> usize {
    ((agents_per_unit * length).round() as usize).max(2)
}

fn run_to_equilibrium(state: &OpinionState, params: &SimParams) -> Result<Equilibrium> {
    let params = SimParams {
        record_every: u64::MAX,
        ..*params
    };
    let (result, _) = simulate(state, &params)?;
    if !result.converged {
        return Err(Error::NotEquilibrium(format!(
            "no fixed point within {} steps",
            params.max_steps
        )));
    }
    Equilibrium::from_result(&result, params.fixed_point_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "L")]
    pub length: f64,
    pub n: usize,
    /// Cluster positions minus `L / 2`.
    pub positions: Vec<f64>,
    /// Agent counts per cluster.
    pub weights: Vec<f64>,
    pub convergence_time: u64,
}

/// Lengths `l_min, l_min + l_step, ...` up to `l_max`, built by
/// multiplication so that no drift accumulates.
pub fn sweep_lengths(l_min: f64, l_max: f64, l_step: f64) -> Result<Vec<f64>> {
    if !(l_min > 0.0 && l_min <= l_max && l_max.is_finite()) {
        return Err(Error::param("L", "need 0 < L_min <= L_max"));
    }
    if !(l_step > 0.0 && l_step.is_finite()) {
        return Err(Error::param("L_step", "must be positive"));
    }
    let count = ((l_max - l_min) / l_step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| l_min + k as f64 * l_step).collect())
}

/// Equilibrium clusters of uniformly spaced agents on `[0, L]` for each `L`
/// in the sweep. Rows come back in increasing `L`.
pub fn bifurcation_sweep(
    l_min: f64,
    l_max: f64,
    l_step: f64,
    agents_per_unit: f64,
    params: &SimParams,
) -> Result<Vec<SweepRow>> {
    if !(agents_per_unit > 0.0 && agents_per_unit.is_finite()) {
        return Err(Error::param("agents_per_unit", "must be positive"));
    }
    params.validate()?;
    sweep_lengths(l_min, l_max, l_step)?
        .into_par_iter()
        .map(|length| {
            let n = agents_for(length, agents_per_unit);
            let eq = run_to_equilibrium(&uniform_spaced(length, n)?, params)?;
            Ok(SweepRow {
                length,
                n,
                positions: eq.positions().iter().map(|p| p - 0.5 * length).collect(),
                weights: eq.weights(),
                convergence_time: eq.source.and_then(|s| s.convergence_time).unwrap_or(0),
            })
        })
        .collect()
}

/// First row with at least two clusters.
pub fn first_split(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().find(|r| r.positions.len() >= 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleClusterCheck {
    #[serde(rename = "L")]
    pub length: f64,
    pub n: usize,
    /// Opinion range after one step, against `[1/2, L - 1/2]`.
    pub after_one: (f64, f64),
    /// Opinion range after two steps, against `[11/12, L - 11/12]`.
    pub after_two: (f64, f64),
    /// Largest distance of the middle agent from `L / 2` over the run.
    pub middle_drift: f64,
    pub clusters: Vec<Cluster>,
    pub convergence_time: Option<u64>,
}

impl SingleClusterCheck {
    /// Lower-end slack of the one- and two-step ranges.
    pub fn slack(&self) -> (f64, f64) {
        (0.5 - self.after_one.0, 11.0 / 12.0 - self.after_two.0)
    }

    pub fn single_cluster(&self) -> bool {
        self.clusters.len() == 1
    }
}

pub fn single_cluster_bound_check(
    length: f64,
    n: usize,
    params: &SimParams,
) -> Result<SingleClusterCheck> {
    if n.is_multiple_of(2) {
        return Err(Error::param("n", "must be odd"));
    }
    params.validate()?;
    let mid = n / 2;
    let center = 0.5 * length;
    let mut s = uniform_spaced(length, n)?;
    let mut ranges = Vec::new();
    let mut middle_drift = (s.opinions()[mid] - center).abs();
    let mut t = 0;
    while !is_fixed_point(&s, params.fixed_point_tol) && t < params.max_steps {
        s = step(&s);
        t += 1;
        if ranges.len() < 2 {
            ranges.push((s.min_opinion(), s.max_opinion()));
        }
        middle_drift = middle_drift.max((s.opinions()[mid] - center).abs());
    }
    while ranges.len() < 2 {
        ranges.push((s.min_opinion(), s.max_opinion()));
    }
    let converged = is_fixed_point(&s, params.fixed_point_tol);
    Ok(SingleClusterCheck {
        length,
        n,
        after_one: ranges[0],
        after_two: ranges[1],
        middle_drift,
        clusters: detect_clusters(&s, DEFAULT_GAP_THRESHOLD),
        convergence_time: converged.then_some(t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedCluster {
    pub position: f64,
    pub weight: f64,
    /// Step at which the cluster's group was cut off from everything the
    /// right end of the interval could have influenced.
    pub certified_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiInfiniteReport {
    pub extent: f64,
    pub n: usize,
    pub convergence_time: u64,
    pub clusters: Vec<CertifiedCluster>,
    /// Consecutive differences of the certified cluster positions.
    pub spacings: Vec<f64>,
}

impl SemiInfiniteReport {
    /// Spacings that do not involve the leftmost cluster.
    pub fn interior_spacings(&self) -> &[f64] {
        self.spacings.get(1..).unwrap_or(&[])
    }
}

/// Uniform agents on `[0, extent]` standing in for a half-line.
///
/// An agent is tainted once its update may differ from the same agent on
/// the half-line. Agents beyond the untainted prefix sit at or above the
/// last untainted opinion, so each step taints every agent within 1 of it.
/// A group is certified when it opens a gap of at least 1 to an untainted
/// agent: from then on it evolves exactly as on the half-line.
pub fn semi_infinite(
    extent: f64,
    agents_per_unit: f64,
    params: &SimParams,
) -> Result<SemiInfiniteReport> {
    if !(extent >= 20.0 && extent.is_finite()) {
        return Err(Error::param("extent", "must be at least 20"));
    }
    if !(agents_per_unit > 0.0 && agents_per_unit.is_finite()) {
        return Err(Error::param("agents_per_unit", "must be positive"));
    }
    params.validate()?;
    let n = agents_for(extent, agents_per_unit);
    let mut s = uniform_spaced(extent, n)?;
    let mut untainted = n;
    let mut certified = 0usize;
    let mut certified_at: Vec<(usize, u64)> = Vec::new();
    let mut t = 0u64;
    loop {
        let x = s.opinions();
        let edge = (certified + 1..untainted)
            .rev()
            .find(|&b| x[b] - x[b - 1] >= 1.0);
        if let Some(b) = edge {
            certified = b;
            certified_at.push((b, t));
        }
        if is_fixed_point(&s, params.fixed_point_tol) || t >= params.max_steps {
            break;
        }
        if untainted > 0 {
            let front = x[untainted - 1];
            untainted = x.partition_point(|&v| front - v >= 1.0);
        }
        s = step(&s);
        t += 1;
    }
    if !is_fixed_point(&s, params.fixed_point_tol) {
        return Err(Error::NotEquilibrium(format!(
            "no fixed point within {} steps",
            params.max_steps
        )));
    }
    let clusters: Vec<CertifiedCluster> = detect_clusters(&s, DEFAULT_GAP_THRESHOLD)
        .into_iter()
        .filter(|c| c.members.end <= certified)
        .map(|c| {
            let at = certified_at
                .iter()
                .find(|&&(b, _)| c.members.end <= b)
                .map(|&(_, at)| at)
                .expect("certified cluster has a certifying edge");
            CertifiedCluster {
                position: c.position,
                weight: c.weight,
                certified_at: at,
            }
        })
        .collect();
    let spacings = clusters
        .windows(2)
        .map(|p| p[1].position - p[0].position)
        .collect();
    Ok(SemiInfiniteReport {
        extent,
        n,
        convergence_time: t,
        clusters,
        spacings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Fig4StableLt2,
    Fig5Conjecture,
    Metastable,
    SlowConvergence,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Fig4StableLt2,
        PresetName::Fig5Conjecture,
        PresetName::Metastable,
        PresetName::SlowConvergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Fig4StableLt2 => "fig4_stable_lt2",
            PresetName::Fig5Conjecture => "fig5_conjecture",
            PresetName::Metastable => "metastable",
            PresetName::SlowConvergence => "slow_convergence",
        }
    }

    /// Whether the scenario draws random numbers.
    pub fn uses_seed(self) -> bool {
        self == PresetName::Fig5Conjecture
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::param("preset", format!("unknown preset `{s}`")))
    }
}

/// 251 agents spaced 0.01 on `[0, 2.5]` and 500 spaced 0.001 on `(2.5, 3]`.
pub fn fig4_initial_state() -> OpinionState {
    let low = (0..=250).map(|i| i as f64 / 100.0);
    let high = (1..=500).map(|k| 2.5 + k as f64 / 1000.0);
    OpinionState::unweighted(low.chain(high).collect()).expect("valid preset")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub weights: (f64, f64),
    pub distance: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub agents: usize,
    pub convergence_time: Option<u64>,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub pairs: Vec<PairReport>,
    pub analytic: StabilityStatus,
}

impl EquilibriumReport {
    fn new(eq: &Equilibrium) -> Self {
        let positions = eq.positions();
        let weights = eq.weights();
        let pairs = (1..positions.len())
            .map(|k| PairReport {
                weights: (weights[k - 1], weights[k]),
                distance: positions[k] - positions[k - 1],
                bound: pair_bound(weights[k - 1], weights[k]),
            })
            .collect();
        Self {
            agents: eq.source.as_ref().map_or(positions.len(), |s| s.agents),
            convergence_time: eq.source.as_ref().and_then(|s| s.convergence_time),
            positions,
            weights,
            pairs,
            analytic: classify(eq).status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Report {
    pub equilibrium: EquilibriumReport,
    pub empirical: EmpiricalVerdict,
}

pub fn fig4_stable_lt2(params: &SimParams) -> Result<Fig4Report> {
    let eq = run_to_equilibrium(&fig4_initial_state(), params)?;
    let empirical = empirical_stability(&eq, &EmpiricalConfig::default())?.verdict;
    Ok(Fig4Report {
        equilibrium: EquilibriumReport::new(&eq),
        empirical,
    })
}

/// Density of the conjecture study: height 1 on `[0, 2.5)` and
/// [`FIG5_DENSITY_RATIO`] on `[2.5, 3)`.
pub const FIG5_DENSITY_RATIO: f64 = 5.0;
pub const FIG5_SIZES: [usize; 2] = [501, 5001];
pub const FIG5_SEEDS: u64 = 20;

pub fn fig5_density() -> DensitySpec {
    DensitySpec::two_level(2.5, 3.0, FIG5_DENSITY_RATIO).expect("valid preset")
}

/// Independent stream for run `index` under the base `seed`.
pub fn run_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: u64,
    pub n: usize,
    pub equilibrium: EquilibriumReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureReport {
    pub seed: u64,
    pub sizes: Vec<usize>,
    /// Fraction of seeds classified Stable, per entry of `sizes`.
    pub stable_fraction: Vec<f64>,
    /// Seed indices classified not Stable at the smallest size and Stable at
    /// the largest.
    pub flipped_to_stable: Vec<u64>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Random draws from `density` at each size, one stream per seed index
/// shared across sizes.
pub fn conjecture_study(
    density: &DensitySpec,
    sizes: &[usize],
    seeds: u64,
    seed: u64,
    params: &SimParams,
) -> Result<ConjectureReport> {
    if sizes.is_empty() || seeds == 0 {
        return Err(Error::param("sizes", "need at least one size and one seed"));
    }
    params.validate()?;
    let tasks: Vec<(u64, usize)> = (0..seeds)
        .flat_map(|i| sizes.iter().map(move |&n| (i, n)))
        .collect();
    let outcomes: Vec<SeedOutcome> = tasks
        .par_iter()
        .map(|&(seed_index, n)| {
            let state = density.sample(n, &mut run_rng(seed, seed_index))?;
            let eq = run_to_equilibrium(&state, params)?;
            Ok(SeedOutcome {
                seed_index,
                n,
                equilibrium: EquilibriumReport::new(&eq),
            })
        })
        .collect::<Result<_>>()?;
    let stable = |o: &SeedOutcome| o.equilibrium.analytic == StabilityStatus::Stable;
    let stable_fraction = sizes
        .iter()
        .map(|&n| outcomes.iter().filter(|o| o.n == n && stable(o)).count() as f64 / seeds as f64)
        .collect();
    let (small, large) = (sizes[0], sizes[sizes.len() - 1]);
    let flipped_to_stable = (0..seeds)
        .filter(|&i| {
            let at = |n| {
                outcomes
                    .iter()
                    .find(|o| o.seed_index == i && o.n == n)
                    .map(stable)
            };
            at(small) == Some(false) && at(large) == Some(true)
        })
        .collect();
    Ok(ConjectureReport {
        seed,
        sizes: sizes.to_vec(),
        stable_fraction,
        flipped_to_stable,
        outcomes,
    })
}

pub const METASTABLE_LENGTH: f64 = 5.0;
pub const METASTABLE_RECORD_EVERY: u64 = 10;
pub const METASTABLE_DRIFT: f64 = 1e-3;
pub const METASTABLE_MIN_LEN: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastableReport {
    #[serde(rename = "L")]
    pub length: f64,
    pub n: usize,
    pub convergence_time: Option<u64>,
    pub final_positions: Vec<f64>,
    pub phases: Vec<MetastablePhase>,
}

/// Uniform agents on `[0, L]` with `L` just below the two-cluster threshold.
pub fn metastable(params: &SimParams) -> Result<MetastableReport> {
    let n = agents_for(METASTABLE_LENGTH, DEFAULT_AGENTS_PER_UNIT);
    let params = SimParams {
        record_every: METASTABLE_RECORD_EVERY,
        ..*params
    };
    let (result, traj) = simulate(&uniform_spaced(METASTABLE_LENGTH, n)?, &params)?;
    Ok(MetastableReport {
        length: METASTABLE_LENGTH,
        n,
        convergence_time: result.convergence_time,
        final_positions: detect_clusters(&result.final_state, DEFAULT_GAP_THRESHOLD)
            .iter()
            .map(|c| c.position)
            .collect(),
        phases: metastable_scan(&traj, METASTABLE_DRIFT, METASTABLE_MIN_LEN),
    })
}

pub const SLOW_SIZES: [usize; 3] = [5, 51, 501];

/// `(n - 1) / 2` agents at 0.1, one at 1, and `(n - 1) / 2` at 1.9.
pub fn slow_convergence_state(n: usize) -> Result<OpinionState> {
    if n.is_multiple_of(2) {
        return Err(Error::param("n", "must be odd"));
    }
    let half = (n - 1) / 2;
    let mut x = vec![0.1; half];
    x.push(1.0);
    x.extend(std::iter::repeat_n(1.9, half));
    OpinionState::unweighted(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowRun {
    pub n: usize,
    pub convergence_time: Option<u64>,
    pub final_positions: Vec<f64>,
}

pub fn slow_convergence(params: &SimParams) -> Result<Vec<SlowRun>> {
    let params = SimParams {
        record_every: u64::MAX,
        ..*params
    };
    SLOW_SIZES
        .iter()
        .map(|&n| {
            let (result, _) = simulate(&slow_convergence_state(n)?, &params)?;
            Ok(SlowRun {
                n,
                convergence_time: result.convergence_time,
                final_positions: detect_clusters(&result.final_state, DEFAULT_GAP_THRESHOLD)
                    .iter()
                    .map(|c| c.position)
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum PresetReport {
    Fig4StableLt2(Fig4Report),
    Fig5Conjecture(ConjectureReport),
    Metastable(MetastableReport),
    SlowConvergence { runs: Vec<SlowRun> },
}

pub fn preset(name: PresetName, seed: u64, params: &SimParams) -> Result<PresetReport> {
    params.validate()?;
    Ok(match name {
        PresetName::Fig4StableLt2 => PresetReport::Fig4StableLt2(fig4_stable_lt2(params)?),
        PresetName::Fig5Conjecture => PresetReport::Fig5Conjecture(conjecture_study(
            &fig5_density(),
            &FIG5_SIZES,
            FIG5_SEEDS,
            seed,
            params,
        )?),
        PresetName::Metastable => PresetReport::Metastable(metastable(params)?),
        PresetName::SlowConvergence => PresetReport::SlowConvergence {
            runs: slow_convergence(params)?,
        },
    })
}
