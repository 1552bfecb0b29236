use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use krause_core::clustering::{detect_clusters, Equilibrium, DEFAULT_GAP_THRESHOLD};
use krause_core::continuum::{
    continuity_probe, distance_to_f, lyapunov_decrement, potential, refine_compare,
    regularity_bounds, LYAPUNOV_TOL,
};
use krause_core::dynamics::{simulate, SimParams};
use krause_core::experiments::{self, PresetName};
use krause_core::io::{self, parse_config, seeded_generator, RunConfig, Scenario};
use krause_core::stability::{classify, empirical_stability, EmpiricalConfig};
use krause_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "krause",
    version,
    about = "Bounded-confidence opinion dynamics"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Step limit; overrides `params.max_steps`.
    #[arg(long, global = true)]
    max_steps: Option<u64>,
    /// Fixed-point tolerance; overrides `params.fixed_point_tol`.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a configured scenario to a fixed point and write its trajectory.
    Simulate,
    /// Equilibrium clusters of uniform agents on [0, L] over a range of L.
    Sweep(SweepArgs),
    /// Classify the equilibrium reached by a scenario, or a given one.
    Stability(StabilityArgs),
    /// Continuum diagnostics for a scenario.
    Continuum(ContinuumArgs),
    /// Run a named study.
    Preset { name: String },
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 4.0)]
    l_min: f64,
    #[arg(long, default_value_t = 6.0)]
    l_max: f64,
    #[arg(long, default_value_t = 0.1)]
    l_step: f64,
    #[arg(long, default_value_t = experiments::DEFAULT_AGENTS_PER_UNIT)]
    agents_per_unit: f64,
    /// Use 5000 agents per unit length.
    #[arg(long, conflicts_with = "agents_per_unit")]
    dense: bool,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    /// Cluster given as POSITION:WEIGHT; repeat for several clusters.
    #[arg(long = "cluster", value_parser = parse_cluster)]
    clusters: Vec<(f64, f64)>,
    /// Skip the perturbation experiment.
    #[arg(long)]
    analytic_only: bool,
}

#[derive(Args, Debug)]
struct ContinuumArgs {
    /// Window width for the density bounds.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Perturbation size for the continuity probe; needs a seed.
    #[arg(long)]
    probe_delta: Option<f64>,
    #[arg(long, default_value_t = 5)]
    probe_trials: usize,
    /// Comma-separated agent counts for the refinement study.
    #[arg(long, value_delimiter = ',')]
    refine: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    horizon: u64,
}

fn parse_cluster(s: &str) -> Result<(f64, f64), String> {
    let (p, w) = s.split_once(':').ok_or("expected POSITION:WEIGHT")?;
    let p = p
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("position: {e}"))?;
    let w = w
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("weight: {e}"))?;
    Ok((p, w))
}

/// Config errors exit with 1, anything else that fails with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| match e.downcast_ref::<Error>() {
        Some(core) => core.is_config_error(),
        None => e.downcast_ref::<UsageError>().is_some(),
    });
    if config {
        1
    } else {
        2
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => cmd_simulate(g),
        Command::Sweep(a) => cmd_sweep(g, a),
        Command::Stability(a) => cmd_stability(g, a),
        Command::Continuum(a) => cmd_continuum(g, a),
        Command::Preset { name } => cmd_preset(g, name),
    }
}

/// Loads the config file, if any, with command-line overrides applied.
fn load_config(g: &Global, preset: Option<PresetName>) -> anyhow::Result<Option<RunConfig>> {
    let mut doc = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config {
                path: String::new(),
                message: format!("{}: {e}", path.display()),
            })?
        }
        None if preset.is_some() => json!({}),
        None => return Ok(None),
    };
    let obj = doc.as_object_mut().ok_or_else(|| Error::Config {
        path: String::new(),
        message: "configuration must be a JSON object".into(),
    })?;
    if let Some(p) = preset {
        match obj.get("preset") {
            Some(existing) if existing != &json!(p.as_str()) => {
                return Err(usage(format!(
                    "config names preset {existing}, command asks for `{p}`"
                )));
            }
            _ => {
                obj.insert("preset".into(), json!(p.as_str()));
            }
        }
    }
    if let Some(seed) = g.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if g.max_steps.is_some() || g.tol.is_some() {
        let params = obj.entry("params").or_insert_with(|| json!({}));
        let params = params.as_object_mut().ok_or_else(|| Error::Config {
            path: "params".into(),
            message: "must be an object".into(),
        })?;
        if let Some(m) = g.max_steps {
            params.insert("max_steps".into(), json!(m));
        }
        if let Some(t) = g.tol {
            params.insert("fixed_point_tol".into(), json!(t));
        }
    }
    Ok(Some(parse_config(&doc.to_string())?))
}

fn flag_params(g: &Global) -> anyhow::Result<SimParams> {
    let mut p = SimParams::default();
    if let Some(m) = g.max_steps {
        p.max_steps = m;
    }
    if let Some(t) = g.tol {
        p.fixed_point_tol = t;
    }
    p.validate()?;
    Ok(p)
}

fn out_path(g: &Global, configured: Option<&Path>, default: &str) -> PathBuf {
    g.out_dir.join(configured.unwrap_or(Path::new(default)))
}

fn write_json(path: &Path, value: &Value, style: io::JsonStyle) -> anyhow::Result<()> {
    let text = io::to_json(value, style)?;
    io::write_file(path, |w| {
        use std::io::Write;
        w.write_all(text.as_bytes()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    Ok(())
}

fn require_scenario(g: &Global) -> anyhow::Result<RunConfig> {
    let cfg = load_config(g, None)?.ok_or_else(|| usage("this command needs --config"))?;
    if let Scenario::Preset(p) = cfg.scenario {
        return Err(usage(format!(
            "config names preset `{p}`; run `krause preset {p}` instead"
        )));
    }
    Ok(cfg)
}

fn clusters_json(state: &krause_core::OpinionState) -> Value {
    let clusters: Vec<Value> = detect_clusters(state, DEFAULT_GAP_THRESHOLD)
        .iter()
        .map(|c| json!({"position": c.position, "weight": c.weight, "agents": c.members.len()}))
        .collect();
    Value::Array(clusters)
}

fn cmd_simulate(g: &Global) -> anyhow::Result<()> {
    let cfg = require_scenario(g)?;
    let state = cfg.initial_state()?.expect("non-preset scenario");
    let (result, traj) = simulate(&state, &cfg.params)?;
    let traj_path = out_path(g, cfg.outputs.trajectory.as_deref(), "trajectory.csv");
    io::write_file(&traj_path, |w| io::emit_trajectory(&traj, w))?;
    let summary = json!({
        "agents": state.len(),
        "converged": result.converged,
        "convergence_time": result.convergence_time,
        "termination": result.termination,
        "steps": traj.step_stats.len(),
        "clusters": clusters_json(&result.final_state),
    });
    let summary_path = out_path(g, cfg.outputs.summary.as_deref(), "summary.json");
    write_json(&summary_path, &summary, cfg.outputs.json)?;
    println!(
        "{} agents, {} after {} steps, {} clusters",
        state.len(),
        if result.converged {
            "fixed point"
        } else {
            "step limit"
        },
        traj.step_stats.len(),
        summary["clusters"].as_array().map_or(0, Vec::len)
    );
    Ok(())
}

fn cmd_sweep(g: &Global, a: &SweepArgs) -> anyhow::Result<()> {
    let params = match load_config(g, None)? {
        Some(cfg) => cfg.params,
        None => flag_params(g)?,
    };
    let apu = if a.dense {
        experiments::DENSE_AGENTS_PER_UNIT
    } else {
        a.agents_per_unit
    };
    let rows = experiments::bifurcation_sweep(a.l_min, a.l_max, a.l_step, apu, &params)?;
    let csv_path = g.out_dir.join("sweep.csv");
    io::write_file(&csv_path, |w| io::emit_sweep(&rows, w))?;
    let first = experiments::first_split(&rows).map(|r| r.length);
    let summary = json!({
        "agents_per_unit": apu,
        "lengths": rows.len(),
        "first_multi_cluster_L": first,
        "rows": rows,
    });
    write_json(
        &g.out_dir.join("sweep.json"),
        &summary,
        io::JsonStyle::Pretty,
    )?;
    match first {
        Some(l) => println!(
            "{} lengths swept; first L with several clusters: {l}",
            rows.len()
        ),
        None => println!("{} lengths swept; a single cluster throughout", rows.len()),
    }
    Ok(())
}

fn cmd_stability(g: &Global, a: &StabilityArgs) -> anyhow::Result<()> {
    let (eq, params) = if !a.clusters.is_empty() {
        if g.config.is_some() {
            return Err(usage("give either --config or --cluster, not both"));
        }
        let params = flag_params(g)?;
        (
            Equilibrium::from_clusters(&a.clusters, params.fixed_point_tol)?,
            params,
        )
    } else {
        let cfg = require_scenario(g)?;
        let state = cfg.initial_state()?.expect("non-preset scenario");
        let sparse = SimParams {
            record_every: u64::MAX,
            ..cfg.params
        };
        let (result, _) = simulate(&state, &sparse)?;
        (
            Equilibrium::from_result(&result, cfg.params.fixed_point_tol)?,
            cfg.params,
        )
    };
    let verdict = classify(&eq);
    let empirical = if a.analytic_only {
        None
    } else {
        let config = EmpiricalConfig {
            params: SimParams {
                record_every: u64::MAX,
                ..params
            },
            ..EmpiricalConfig::default()
        };
        Some(empirical_stability(&eq, &config)?)
    };
    let report = json!({
        "positions": eq.positions(),
        "weights": eq.weights(),
        "analytic": verdict,
        "empirical": empirical,
    });
    write_json(
        &g.out_dir.join("stability.json"),
        &report,
        io::JsonStyle::Pretty,
    )?;
    println!(
        "{} clusters: analytic {:?}{}",
        eq.clusters.len(),
        verdict.status,
        empirical.map_or(String::new(), |e| format!(", empirical {:?}", e.verdict))
    );
    Ok(())
}

fn cmd_continuum(g: &Global, a: &ContinuumArgs) -> anyhow::Result<()> {
    let cfg = require_scenario(g)?;
    let state = cfg.initial_state()?.expect("non-preset scenario");
    let sparse = SimParams {
        record_every: 1,
        ..cfg.params
    };
    let (result, traj) = simulate(&state, &sparse)?;
    let lyapunov_holds = traj
        .snapshots
        .iter()
        .all(|s| lyapunov_decrement(s).holds(LYAPUNOV_TOL));
    let eps: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| distance_to_f(s).epsilon)
        .collect();
    let mut report = json!({
        "agents": state.len(),
        "potential": potential(&state),
        "lyapunov_holds": lyapunov_holds,
        "converged": result.converged,
        "convergence_time": result.convergence_time,
        "distance_to_f": eps,
        "final": distance_to_f(&result.final_state),
        "regularity": regularity_bounds(&state, a.window).ok(),
    });
    if let Some(delta) = a.probe_delta {
        let seed = cfg
            .seed
            .ok_or_else(|| usage("--probe-delta needs a seed"))?;
        let probe = continuity_probe(&state, delta, a.probe_trials, &mut seeded_generator(seed))?;
        report["continuity"] = json!(probe);
    }
    if !a.refine.is_empty() {
        let Scenario::Density { density, .. } = &cfg.scenario else {
            bail!(usage("--refine needs a `density` scenario"));
        };
        report["refinement"] = json!(refine_compare(density, &a.refine, a.horizon)?);
    }
    let path = out_path(g, cfg.outputs.summary.as_deref(), "continuum.json");
    write_json(&path, &report, cfg.outputs.json)?;
    println!(
        "{} agents, Lyapunov decrement {} along {} steps",
        state.len(),
        if lyapunov_holds { "holds" } else { "FAILS" },
        traj.step_stats.len()
    );
    Ok(())
}

fn cmd_preset(g: &Global, name: &str) -> anyhow::Result<()> {
    let preset: PresetName = name.parse()?;
    let cfg = load_config(g, Some(preset))?.ok_or_else(|| anyhow!("preset config"))?;
    let report = experiments::preset(preset, cfg.seed.unwrap_or(0), &cfg.params)
        .with_context(|| format!("preset `{preset}`"))?;
    let path = out_path(g, cfg.outputs.summary.as_deref(), &format!("{preset}.json"));
    write_json(&path, &json!(report), cfg.outputs.json)?;
    println!("{preset}: report written to {}", path.display());
    Ok(())
}
