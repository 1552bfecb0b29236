//! Adjacency, degree and Laplacian operators of a weighted state, the
//! potential `V`, and the per-step Lyapunov decrement.
//!
//! A weighted state is a step-function opinion profile: agent `i` stands for
//! a set of indices of measure `w_i`. With that reading the scalar product
//! is `<y, z> = Σ w_i y_i z_i` and
//!
//! ```text
//! (A y)_i = Σ_{j ~ i} w_j y_j      d_i = (A 1)_i      L = D - A
//! ```
//!
//! where `j ~ i` means `|x_i - x_j| < 1`. All sums run over neighbor windows
//! with compensated prefix sums, so every operator costs O(n).

use serde::{Deserialize, Serialize};

use crate::dynamics::step;
use crate::error::{Error, Result};
use crate::state::{connected, window_weighted_sums, GroupPrefix, OpinionState};

fn check_len(state: &OpinionState, y: &[f64]) -> Result<()> {
    if y.len() != state.len() {
        return Err(Error::VectorLength {
            expected: state.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `<y, z> = Σ w_i y_i z_i`.
pub fn scalar_product(state: &OpinionState, y: &[f64], z: &[f64]) -> f64 {
    state
        .weights()
        .iter()
        .zip(y)
        .zip(z)
        .map(|((w, a), b)| w * a * b)
        .sum()
}

/// Weight of each agent's neighbor window, in `(0, total_weight]`.
pub fn degree(state: &OpinionState) -> Vec<f64> {
    let ones = vec![1.0; state.len()];
    window_weighted_sums(state, &state.neighbor_windows(), &ones)
}

pub fn adjacency_apply(state: &OpinionState, y: &[f64]) -> Result<Vec<f64>> {
    check_len(state, y)?;
    Ok(window_weighted_sums(state, &state.neighbor_windows(), y))
}

/// `(L y)_i = d_i y_i - (A y)_i = Σ_{j ~ i} w_j (y_i - y_j)`.
pub fn laplacian_apply(state: &OpinionState, y: &[f64]) -> Result<Vec<f64>> {
    check_len(state, y)?;
    let windows = state.neighbor_windows();
    let d = window_weighted_sums(state, &windows, &vec![1.0; y.len()]);
    let ay = window_weighted_sums(state, &windows, y);
    Ok(d.iter()
        .zip(&ay)
        .zip(y)
        .map(|((d, a), y)| d * y - a)
        .collect())
}

/// Opinions shifted by the first opinion of their decoupled group. `L` acts
/// within groups and annihilates constants, so `L x = L x_centered`, and the
/// centered form avoids cancellation on long chains.
fn group_centered(state: &OpinionState) -> Vec<f64> {
    let x = state.opinions();
    let mut out = vec![0.0; x.len()];
    for g in state.decoupled_groups() {
        let anchor = x[g.start];
        for k in g {
            out[k] = x[k] - anchor;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianResidual {
    /// `(L_x x)_i`.
    pub residual: Vec<f64>,
    /// `max_i |step(x)_i - x_i + (L_x x)_i / d_i|`, scaled by
    /// `max(1, max |x|)`.
    pub identity_error: f64,
}

/// `L_x x`, together with the discrepancy between the compact update form
/// `Δx = -D^{-1} L_x x` and the actual update.
pub fn laplacian_residual(state: &OpinionState) -> LaplacianResidual {
    let centered = group_centered(state);
    let residual = laplacian_apply(state, &centered).expect("lengths match");
    let d = degree(state);
    let next = step(state);
    let scale = state.opinions().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let identity_error = state
        .opinions()
        .iter()
        .zip(next.opinions())
        .zip(residual.iter().zip(&d))
        .map(|((x, nx), (r, d))| ((nx - x) + r / d).abs())
        .fold(0.0, f64::max)
        / scale;
    LaplacianResidual {
        residual,
        identity_error,
    }
}

/// `<y, L_x y>`. Nonnegative up to rounding.
pub fn psd_check(state: &OpinionState, y: &[f64]) -> Result<f64> {
    let ly = laplacian_apply(state, y)?;
    Ok(scalar_product(state, y, &ly))
}

/// `<y, (D_x + A_x) y>`.
pub fn plus_form(state: &OpinionState, y: &[f64]) -> Result<f64> {
    check_len(state, y)?;
    let windows = state.neighbor_windows();
    let d = window_weighted_sums(state, &windows, &vec![1.0; y.len()]);
    let ay = window_weighted_sums(state, &windows, y);
    let dy_plus_ay: Vec<f64> = d
        .iter()
        .zip(&ay)
        .zip(y)
        .map(|((d, a), y)| d * y + a)
        .collect();
    Ok(scalar_product(state, y, &dy_plus_ay))
}

/// `Σ_i Σ_j w_i w_j`, over pairs that are not neighbors.
pub fn disconnected_pair_mass(state: &OpinionState) -> f64 {
    let w = state.weights();
    outside_masses(state)
        .iter()
        .zip(w)
        .map(|(o, w)| w * o)
        .sum()
}

/// Mass outside each agent's window, summed from the two tails so that a
/// window covering everything gives exactly 0.
fn outside_masses(state: &OpinionState) -> Vec<f64> {
    let w = state.weights();
    let n = w.len();
    let mut left = vec![0.0; n + 1];
    for k in 0..n {
        left[k + 1] = left[k] + w[k];
    }
    let mut right = vec![0.0; n + 1];
    for k in (0..n).rev() {
        right[k] = right[k + 1] + w[k];
    }
    state
        .neighbor_windows()
        .into_iter()
        .map(|(lo, hi)| left[lo] + right[hi + 1])
        .collect()
}

/// `V(x) = 1/2 Σ_i Σ_j w_i w_j min(1, (x_i - x_j)^2)` in O(n).
///
/// Inside a window `(x_i - x_j)^2 < 1`, so the window part is expanded in
/// group-centered moments; every other pair contributes its mass.
pub fn potential(state: &OpinionState) -> f64 {
    let w = state.weights();
    let y = group_centered(state);
    let groups = state.decoupled_groups();
    let n = state.len();
    let s0 = GroupPrefix::new(&groups, n, |k| w[k]);
    let s1 = GroupPrefix::new(&groups, n, |k| w[k] * y[k]);
    let s2 = GroupPrefix::new(&groups, n, |k| w[k] * y[k] * y[k]);
    let outside = outside_masses(state);
    let mut acc = 0.0;
    for (i, (lo, hi)) in state.neighbor_windows().into_iter().enumerate() {
        let m0 = s0.window(lo, hi);
        let m1 = s1.window(lo, hi);
        let m2 = s2.window(lo, hi);
        let inside = (y[i] * y[i] * m0 - 2.0 * y[i] * m1 + m2).max(0.0);
        acc += w[i] * (inside + outside[i]);
    }
    0.5 * acc
}

/// Direct O(n^2) evaluation of the potential.
pub fn potential_naive(state: &OpinionState) -> f64 {
    let x = state.opinions();
    let w = state.weights();
    let mut acc = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            let d = x[i] - x[j];
            acc += w[i] * w[j] * (d * d).min(1.0);
        }
    }
    0.5 * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovStep {
    pub potential: f64,
    /// `V(step(x)) - V(x)`.
    pub delta_v: f64,
    /// `-<Δx, (A_x + D_x) Δx>`, never positive.
    pub bound: f64,
}

impl LyapunovStep {
    /// `delta_v <= bound` up to `tol * max(1, V)`.
    pub fn holds(&self, tol: f64) -> bool {
        self.delta_v <= self.bound + tol * self.potential.abs().max(1.0)
    }
}

pub const LYAPUNOV_TOL: f64 = 1e-9;

pub fn lyapunov_decrement(state: &OpinionState) -> LyapunovStep {
    let next = step(state);
    let dx: Vec<f64> = next
        .opinions()
        .iter()
        .zip(state.opinions())
        .map(|(a, b)| a - b)
        .collect();
    let v = potential(state);
    let bound = -plus_form(state, &dx).expect("lengths match");
    LyapunovStep {
        potential: v,
        delta_v: potential(&next) - v,
        bound: bound.min(0.0),
    }
}

/// Both sides of `V(x) = <x, L_x x> + 1/2 |non-neighbor pairs|`.
pub fn potential_tightness(state: &OpinionState) -> (f64, f64) {
    let y = group_centered(state);
    let quad = psd_check(state, &y).expect("lengths match");
    (potential(state), quad + 0.5 * disconnected_pair_mass(state))
}

/// Updated opinion of a hypothetical agent holding `a`: the weighted mean of
/// opinions within distance < 1 of `a`, or `a` itself when no agent is that
/// close.
pub fn update_map(state: &OpinionState, a: f64) -> f64 {
    let x = state.opinions();
    let w = state.weights();
    let lo = x.partition_point(|&xj| !connected(a, xj) && xj < a);
    let hi = x.partition_point(|&xj| xj < a || connected(a, xj));
    if lo >= hi {
        return a;
    }
    let anchor = x[lo];
    let (mut mass, mut dev) = (0.0, 0.0);
    for k in lo..hi {
        mass += w[k];
        dev += w[k] * (x[k] - anchor);
    }
    (anchor + dev / mass).clamp(x[lo], x[hi - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thirds(x: &[f64]) -> OpinionState {
        let n = x.len();
        OpinionState::new(x.to_vec(), vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn degree_examples() {
        let all = thirds(&[0.0, 0.3, 0.9]);
        for d in degree(&all) {
            assert!((d - 1.0).abs() < 1e-15);
        }
        let halves = OpinionState::new(vec![0.0, 1.5], vec![0.5, 0.5]).unwrap();
        assert_eq!(degree(&halves), vec![0.5, 0.5]);
        let chain = thirds(&[0.0, 0.9, 1.8]);
        let d = degree(&chain);
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0).abs() < 1e-15);
        assert!((d[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn adjacency_examples() {
        let s = thirds(&[0.0, 0.4, 0.9, 3.0]);
        assert_eq!(adjacency_apply(&s, &[1.0; 4]).unwrap(), degree(&s));
        let apart = OpinionState::new(vec![0.0, 2.0, 4.0], vec![0.5, 2.0, 3.0]).unwrap();
        assert_eq!(
            adjacency_apply(&apart, &[2.0, -1.0, 0.5]).unwrap(),
            vec![1.0, -2.0, 1.5]
        );
        assert!(matches!(
            adjacency_apply(&apart, &[1.0]),
            Err(Error::VectorLength { .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let s = thirds(&[0.0, 0.5, 1.0]);
        let r = laplacian_residual(&s);
        assert!((r.residual[0] + 1.0 / 6.0).abs() < 1e-15);
        assert!(r.identity_error < 1e-12);

        let fixed = OpinionState::new(vec![0.2, 0.2, 1.7, 4.0], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(laplacian_residual(&fixed)
            .residual
            .iter()
            .all(|&v| v == 0.0));

        let shifted = thirds(&[7.0, 7.5, 8.0]);
        let a = laplacian_residual(&s).residual;
        let b = laplacian_residual(&shifted).residual;
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn potential_examples() {
        assert_eq!(potential(&thirds(&[1.0, 1.0, 1.0])), 0.0);
        let far = OpinionState::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(potential(&far), 0.25);
        let near = OpinionState::new(vec![0.0, 0.5], vec![0.5, 0.5]).unwrap();
        assert!((potential(&near) - 1.0 / 16.0).abs() < 1e-16);
    }

    #[test]
    fn lyapunov_examples() {
        let fixed = OpinionState::new(vec![0.0, 1.5], vec![0.5, 0.5]).unwrap();
        let l = lyapunov_decrement(&fixed);
        assert_eq!((l.delta_v, l.bound), (0.0, 0.0));
        let s = thirds(&[0.0, 0.5, 1.0]);
        let l = lyapunov_decrement(&s);
        assert!(l.bound < 0.0);
        assert!(l.holds(LYAPUNOV_TOL));
        assert!(l.delta_v <= l.bound + 1e-15);
    }

    #[test]
    fn psd_of_constant_is_zero() {
        let s = thirds(&[0.0, 0.4, 0.9, 1.3]);
        assert!(psd_check(&s, &[3.0; 4]).unwrap().abs() < 1e-15);
        assert!(psd_check(&s, &[0.0, 1.0, -1.0, 2.0]).unwrap() > 0.0);
    }

    #[test]
    fn update_map_matches_step_on_agents() {
        let s = thirds(&[0.0, 0.2, 0.7, 1.6, 2.0, 3.5]);
        let next = step(&s);
        for (x, nx) in s.opinions().iter().zip(next.opinions()) {
            assert!((update_map(&s, *x) - nx).abs() < 1e-15);
        }
        assert_eq!(update_map(&s, 10.0), 10.0);
    }
}
