//! Piecewise-constant opinion densities and their quantile discretizations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::OpinionState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    /// Unnormalized height on `[start, end)`.
    pub density: f64,
}

/// Density on `[pieces[0].start, pieces.last().end]`, normalized to mass 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Piece>", into = "Vec<Piece>")]
pub struct DensitySpec {
    pieces: Vec<Piece>,
    /// Cumulative normalized mass at each piece start, plus 1 at the end.
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<Piece>> for DensitySpec {
    type Error = Error;

    fn try_from(pieces: Vec<Piece>) -> Result<Self> {
        Self::new(pieces)
    }
}

impl From<DensitySpec> for Vec<Piece> {
    fn from(d: DensitySpec) -> Self {
        d.pieces
    }
}

/// How quantile agents are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// `F^{-1}((i - 1/2) / n)`.
    #[default]
    Midpoint,
    /// `F^{-1}(i / n)`, the right endpoint of each mass cell.
    RightEndpoint,
}

impl DensitySpec {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidDensity("no pieces".into()));
        }
        if pieces[0].start < 0.0 {
            return Err(Error::InvalidDensity(
                "support must start at or above 0".into(),
            ));
        }
        for (k, p) in pieces.iter().enumerate() {
            if !(p.start.is_finite() && p.end.is_finite() && p.end > p.start) {
                return Err(Error::InvalidDensity(format!(
                    "piece {k} has an empty or invalid interval"
                )));
            }
            if !(p.density.is_finite() && p.density >= 0.0) {
                return Err(Error::InvalidDensity(format!(
                    "piece {k} has a negative or invalid density"
                )));
            }
            if k > 0 && p.start != pieces[k - 1].end {
                return Err(Error::InvalidDensity(format!(
                    "piece {k} does not start where piece {} ends",
                    k - 1
                )));
            }
        }
        let total: f64 = pieces.iter().map(|p| p.density * (p.end - p.start)).sum();
        if total <= 0.0 {
            return Err(Error::InvalidDensity("total mass is zero".into()));
        }
        let mut cumulative = Vec::with_capacity(pieces.len() + 1);
        let mut acc = 0.0;
        for p in &pieces {
            cumulative.push(acc);
            acc += p.density * (p.end - p.start) / total;
        }
        cumulative.push(1.0);
        Ok(Self { pieces, cumulative })
    }

    pub fn uniform(start: f64, end: f64) -> Result<Self> {
        Self::new(vec![Piece {
            start,
            end,
            density: 1.0,
        }])
    }

    /// Two-level density: height 1 on `[0, split)`, `ratio` on `[split, end)`.
    pub fn two_level(split: f64, end: f64, ratio: f64) -> Result<Self> {
        Self::new(vec![
            Piece {
                start: 0.0,
                end: split,
                density: 1.0,
            },
            Piece {
                start: split,
                end,
                density: ratio,
            },
        ])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn support(&self) -> (f64, f64) {
        (self.pieces[0].start, self.pieces[self.pieces.len() - 1].end)
    }

    /// Normalized density value at `x` (0 outside the support).
    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x < lo || x >= hi {
            return 0.0;
        }
        let k = self.pieces.partition_point(|p| p.end <= x);
        let p = &self.pieces[k];
        (self.cumulative[k + 1] - self.cumulative[k]) / (p.end - p.start)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let k = self.pieces.partition_point(|p| p.end <= x);
        let p = &self.pieces[k];
        self.cumulative[k]
            + (self.cumulative[k + 1] - self.cumulative[k]) * (x - p.start) / (p.end - p.start)
    }

    /// Smallest `x` with `cdf(x) >= u`, for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // First piece whose cumulative end reaches u and that carries mass.
        let mut k = self.cumulative[1..].partition_point(|&c| c < u);
        k = k.min(self.pieces.len() - 1);
        while self.cumulative[k + 1] <= self.cumulative[k] && k + 1 < self.pieces.len() {
            k += 1;
        }
        let p = &self.pieces[k];
        let mass = self.cumulative[k + 1] - self.cumulative[k];
        if mass <= 0.0 {
            return p.start;
        }
        let frac = ((u - self.cumulative[k]) / mass).clamp(0.0, 1.0);
        p.start + frac * (p.end - p.start)
    }

    /// `n` agents of weight `1/n` at quantile positions.
    pub fn discretize(&self, n: usize, rule: QuantileRule) -> Result<OpinionState> {
        if n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        let offset = match rule {
            QuantileRule::Midpoint => 0.5,
            QuantileRule::RightEndpoint => 0.0,
        };
        let opinions: Vec<f64> = (1..=n)
            .map(|i| self.quantile((i as f64 - offset) / n as f64))
            .collect();
        OpinionState::new(opinions, vec![1.0 / n as f64; n])
    }

    /// `n` independent inverse-CDF draws, sorted, with unit weights.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<OpinionState> {
        if n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        let mut opinions: Vec<f64> = (0..n).map(|_| self.quantile(rng.random::<f64>())).collect();
        opinions.sort_by(f64::total_cmp);
        OpinionState::unweighted(opinions)
    }
}
