//! Run configuration, file formats and the seeded random stream.
//!
//! Configuration is a JSON object. Exactly one scenario source is allowed:
//!
//! ```json
//! {"preset": "fig4_stable_lt2"}
//! {"opinions": [0.0, 0.5, 1.0], "weights": [1, 1, 2]}
//! {"density": [{"start": 0, "end": 10, "density": 1}], "n": 500, "sampling": "quantile"}
//! ```
//!
//! Optional keys: `params` (`fixed_point_tol`, `max_steps`, `record_every`),
//! `seed`, and `outputs` (`trajectory`, `summary`, `json`). Unknown keys are
//! rejected.
//!
//! Trajectories are written as CSV with header `t,agent_index,opinion,weight`,
//! one row per agent per recorded time. Numbers use the shortest decimal
//! form that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continuum::{DensitySpec, Piece, QuantileRule};
use crate::dynamics::{SimParams, Trajectory};
use crate::error::{Error, Result};
use crate::experiments::{PresetName, SweepRow};
use crate::state::OpinionState;

/// Generator behind every random draw. ChaCha8 from `rand_chacha` 0.9,
/// seeded with `SeedableRng::seed_from_u64`; its output is fixed across
/// platforms and releases of that crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_generator(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Midpoint quantiles.
    #[default]
    Quantile,
    /// Right-endpoint quantiles.
    RightEndpoint,
    /// Independent inverse-CDF draws; needs a seed.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Explicit(OpinionState),
    Density {
        density: DensitySpec,
        n: usize,
        sampling: Sampling,
    },
    Preset(PresetName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsonStyle {
    #[default]
    Pretty,
    Compact,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    /// Trajectory CSV path, relative to the output directory.
    pub trajectory: Option<PathBuf>,
    /// JSON summary path, relative to the output directory.
    pub summary: Option<PathBuf>,
    pub json: JsonStyle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub params: SimParams,
    pub seed: Option<u64>,
    pub outputs: Outputs,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<PresetName>,
    opinions: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    density: Option<Vec<Piece>>,
    n: Option<usize>,
    sampling: Option<Sampling>,
    #[serde(default)]
    params: SimParams,
    seed: Option<u64>,
    #[serde(default)]
    outputs: Outputs,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    raw.validate()
}

impl RawConfig {
    fn validate(self) -> Result<RunConfig> {
        let sources = [
            self.preset.is_some(),
            self.opinions.is_some(),
            self.density.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            0 => {
                return Err(config_err(
                    "",
                    "one of `preset`, `opinions` or `density` is required",
                ))
            }
            1 => {}
            _ => {
                return Err(config_err(
                    "",
                    "`preset`, `opinions` and `density` are mutually exclusive",
                ))
            }
        }
        if self.weights.is_some() && self.opinions.is_none() {
            return Err(config_err(
                "weights",
                "only allowed together with `opinions`",
            ));
        }
        if self.density.is_none() {
            if self.n.is_some() {
                return Err(config_err("n", "only allowed together with `density`"));
            }
            if self.sampling.is_some() {
                return Err(config_err(
                    "sampling",
                    "only allowed together with `density`",
                ));
            }
        }
        self.params.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => {
                config_err(format!("params.{name}"), reason)
            }
            other => other,
        })?;

        let scenario = if let Some(p) = self.preset {
            Scenario::Preset(p)
        } else if let Some(opinions) = self.opinions {
            let weights = match self.weights {
                Some(w) => {
                    if w.len() != opinions.len() {
                        return Err(config_err(
                            "weights",
                            format!(
                                "has {} entries but `opinions` has {}",
                                w.len(),
                                opinions.len()
                            ),
                        ));
                    }
                    w
                }
                None => vec![1.0; opinions.len()],
            };
            if opinions.is_empty() {
                return Err(config_err("opinions", "must contain at least one agent"));
            }
            if let Some(i) = opinions.iter().position(|x| !x.is_finite()) {
                return Err(config_err(format!("opinions[{i}]"), "must be finite"));
            }
            if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(config_err(
                    format!("weights[{i}]"),
                    format!("must be positive, got {}", weights[i]),
                ));
            }
            Scenario::Explicit(OpinionState::from_unsorted(
                opinions.into_iter().zip(weights).collect(),
            )?)
        } else {
            let pieces = self.density.expect("one source is present");
            let density =
                DensitySpec::new(pieces).map_err(|e| config_err("density", e.to_string()))?;
            let n = self
                .n
                .ok_or_else(|| config_err("n", "required with `density`"))?;
            if n == 0 {
                return Err(config_err("n", "must be >= 1"));
            }
            let sampling = self.sampling.unwrap_or_default();
            if sampling == Sampling::Random && self.seed.is_none() {
                return Err(config_err("seed", "required when `sampling` is `random`"));
            }
            Scenario::Density {
                density,
                n,
                sampling,
            }
        };
        if let Scenario::Preset(p) = scenario {
            if p.uses_seed() && self.seed.is_none() {
                return Err(config_err("seed", format!("required by preset `{p}`")));
            }
        }
        Ok(RunConfig {
            scenario,
            params: self.params,
            seed: self.seed,
            outputs: self.outputs,
        })
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_config(&text)
    }

    /// Initial state of a non-preset scenario.
    pub fn initial_state(&self) -> Result<Option<OpinionState>> {
        Ok(match &self.scenario {
            Scenario::Explicit(s) => Some(s.clone()),
            Scenario::Density {
                density,
                n,
                sampling,
            } => Some(match sampling {
                Sampling::Quantile => density.discretize(*n, QuantileRule::Midpoint)?,
                Sampling::RightEndpoint => density.discretize(*n, QuantileRule::RightEndpoint)?,
                Sampling::Random => {
                    let seed = self
                        .seed
                        .ok_or_else(|| config_err("seed", "required for random sampling"))?;
                    density.sample(*n, &mut seeded_generator(seed))?
                }
            }),
            Scenario::Preset(_) => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub agent_index: usize,
    pub opinion: f64,
    pub weight: f64,
}

pub fn emit_trajectory<W: Write>(traj: &Trajectory, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(["t", "agent_index", "opinion", "weight"])?;
    for s in &traj.snapshots {
        for (k, (x, wt)) in s.opinions().iter().zip(s.weights()).enumerate() {
            w.serialize(TrajectoryRow {
                t: s.time(),
                agent_index: k,
                opinion: *x,
                weight: *wt,
            })?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_trajectory<R: Read>(source: R) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(source);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Rebuilds the snapshots of a trajectory from its CSV rows.
pub fn snapshots_from_rows(rows: &[TrajectoryRow]) -> Result<Vec<OpinionState>> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < rows.len() {
        let t = rows[k].t;
        let end = k + rows[k..].iter().take_while(|r| r.t == t).count();
        let (x, w) = rows[k..end].iter().map(|r| (r.opinion, r.weight)).unzip();
        out.push(OpinionState::new(x, w)?.with_time(t));
        k = end;
    }
    Ok(out)
}

#[derive(Serialize)]
struct SweepCsvRow {
    #[serde(rename = "L")]
    length: f64,
    n: usize,
    cluster_index: usize,
    position: f64,
    weight: f64,
    convergence_time: u64,
}

/// One CSV row per cluster: `L,n,cluster_index,position,weight,convergence_time`.
pub fn emit_sweep<W: Write>(rows: &[SweepRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    for r in rows {
        for (k, (p, wt)) in r.positions.iter().zip(&r.weights).enumerate() {
            w.serialize(SweepCsvRow {
                length: r.length,
                n: r.n,
                cluster_index: k,
                position: *p,
                weight: *wt,
                convergence_time: r.convergence_time,
            })?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T, style: JsonStyle) -> Result<String> {
    let mut s = match style {
        JsonStyle::Pretty => serde_json::to_string_pretty(value)?,
        JsonStyle::Compact => serde_json::to_string(value)?,
    };
    s.push('\n');
    Ok(s)
}

/// Creates `path` (and its parent directories) and hands a buffered writer
/// to `body`.
pub fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut w)?;
    w.flush().map_err(io_err)
}
