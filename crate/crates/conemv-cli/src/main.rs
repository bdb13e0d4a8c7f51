//! Batch front door for the conemv solver: ingest a JSON run config, solve
//! or simulate, and emit deterministic CSV/JSON artifacts plus a manifest
//! with content hashes.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error, 4 I/O
//! error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use conemv::cones::{Cone, ConeSpec};
use conemv::drift::MinimizeOptions;
use conemv::model::{LevyModel, ModelSpec};
use conemv::opportunity::{self, Scheme, SolveOptions};
use conemv::oracle;
use conemv::simulate::{self, MarkowitzForm};

#[derive(Parser)]
#[command(name = "conemv", about = "Cone-constrained mean-variance solver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled backward equations under the configured cone.
    Solve(CommonArgs),
    /// Solve the unconstrained specialization (single opportunity process).
    Unconstrained(CommonArgs),
    /// Simulate terminal wealth under the assembled optimal strategy.
    Simulate(CommonArgs),
    /// Sweep target means and report the realized frontier.
    Frontier(CommonArgs),
    /// Compare the dynamic-programming tree values against the solver.
    OracleCompare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of solver time steps (overrides the config).
    #[arg(long)]
    steps: Option<usize>,
    /// Number of Monte Carlo paths (overrides the config).
    #[arg(long)]
    paths: Option<usize>,
}

enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) | CliError::Io(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: ModelSpec,
    cone: Option<ConeSpec>,
    problem: Option<String>,
    #[serde(default)]
    options: ConfigOptions,
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOptions {
    n_steps: Option<usize>,
    scheme: Option<String>,
    mc_paths: Option<usize>,
    seed: Option<u64>,
    gamma: Option<f64>,
    m: Option<f64>,
    x: Option<f64>,
    /// `[lo, hi, count]` grid of target means for frontier sweeps.
    m_grid: Option<(f64, f64, usize)>,
    oracle_steps: Option<Vec<usize>>,
    gauss_points: Option<usize>,
}

/// The options actually used for a run, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
struct ResolvedOptions {
    problem: String,
    n_steps: usize,
    scheme: String,
    mc_paths: usize,
    seed: u64,
    gamma: Option<f64>,
    m: Option<f64>,
    x: f64,
    m_grid: Vec<f64>,
    oracle_steps: Vec<usize>,
    gauss_points: usize,
}

struct Run {
    model: LevyModel,
    cone: Option<Cone>,
    options: ResolvedOptions,
    out_dir: PathBuf,
    config_path: PathBuf,
    config_sha256: String,
}

fn problem_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Solve(_) => "solve",
        Command::Unconstrained(_) => "unconstrained",
        Command::Simulate(_) => "simulate",
        Command::Frontier(_) => "frontier",
        Command::OracleCompare(_) => "oracle-compare",
    }
}

fn load_run(cmd: &Command, args: &CommonArgs) -> Result<Run, CliError> {
    let raw = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("config field `{}`: {}", e.path(), e.inner())))?;

    let problem = problem_name(cmd).to_string();
    if let Some(p) = &config.problem {
        if *p != problem {
            return Err(CliError::Config(format!(
                "config field `problem` is `{p}` but the `{problem}` subcommand was invoked"
            )));
        }
    }

    let model = LevyModel::from_spec(config.model).map_err(config_err)?;
    let cone = match &config.cone {
        Some(spec) => {
            let cone = Cone::from_spec(spec).map_err(config_err)?;
            if cone.dim() != model.dim() {
                return Err(CliError::Config(format!(
                    "cone dimension {} does not match model dimension {}",
                    cone.dim(),
                    model.dim()
                )));
            }
            Some(cone)
        }
        None => None,
    };
    if problem != "unconstrained" && cone.is_none() {
        return Err(CliError::Config(format!(
            "config field `cone` is required for `{problem}`"
        )));
    }

    let o = &config.options;
    let n_steps = args.steps.or(o.n_steps).unwrap_or(1000);
    if !(1..=10_000_000).contains(&n_steps) {
        return Err(CliError::Config(format!("n_steps {n_steps} out of range")));
    }
    let scheme = o.scheme.clone().unwrap_or_else(|| "rk4".into());
    if scheme != "rk4" && scheme != "euler" {
        return Err(CliError::Config(format!(
            "scheme must be `rk4` or `euler`, got `{scheme}`"
        )));
    }
    let mc_paths = args.paths.or(o.mc_paths).unwrap_or(100_000);
    if mc_paths < 2 {
        return Err(CliError::Config("mc_paths must be at least 2".into()));
    }
    let seed = args.seed.or(o.seed).unwrap_or(0);
    if let Some(g) = o.gamma {
        if !(g.is_finite() && g > 0.0) {
            return Err(CliError::Config(format!("gamma must be positive, got {g}")));
        }
    }
    let x = o.x.unwrap_or(-1.0);
    if !x.is_finite() {
        return Err(CliError::Config("x must be finite".into()));
    }
    let m_grid = match o.m_grid {
        Some((lo, hi, count)) => {
            if count < 1 || !lo.is_finite() || !hi.is_finite() {
                return Err(CliError::Config("m_grid must be [lo, hi, count >= 1]".into()));
            }
            (0..count)
                .map(|i| {
                    if count == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * i as f64 / (count - 1) as f64
                    }
                })
                .collect()
        }
        None => (1..=8).map(|i| x + 0.25 * i as f64).collect(),
    };
    let oracle_steps = o.oracle_steps.clone().unwrap_or_else(|| vec![20, 40, 80, 160]);
    if oracle_steps.is_empty() || oracle_steps.contains(&0) {
        return Err(CliError::Config("oracle_steps must be positive".into()));
    }
    let gauss_points = o.gauss_points.unwrap_or(3);
    if !(1..=12).contains(&gauss_points) {
        return Err(CliError::Config(format!(
            "gauss_points {gauss_points} out of range 1..=12"
        )));
    }

    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Run {
        model,
        cone,
        options: ResolvedOptions {
            problem,
            n_steps,
            scheme,
            mc_paths,
            seed,
            gamma: o.gamma,
            m: o.m,
            x,
            m_grid,
            oracle_steps,
            gauss_points,
        },
        out_dir,
        config_path: args.config.clone(),
        config_sha256: sha256_hex(raw.as_bytes()),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn solve_options(run: &Run) -> SolveOptions {
    SolveOptions {
        n_steps: run.options.n_steps,
        scheme: if run.options.scheme == "euler" { Scheme::Euler } else { Scheme::Rk4 },
        minimize: MinimizeOptions::default(),
    }
}

/// Rejects artifacts containing non-finite numbers before anything is
/// written, so solver degeneracies surface as named errors.
fn scan_finite(name: &str, content: &str) -> Result<(), CliError> {
    if content.contains("NaN") || content.contains("inf") {
        return Err(CliError::Solver(format!(
            "artifact {name} contains a non-finite value"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    inputs: ManifestInputs,
    options: &'a ResolvedOptions,
    outputs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestInputs {
    config: String,
    sha256: String,
}

fn write_artifacts(run: &Run, artifacts: &[(String, String)]) -> Result<(), CliError> {
    for (name, content) in artifacts {
        scan_finite(name, content)?;
    }
    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", run.out_dir.display())))?;
    let mut outputs = Vec::with_capacity(artifacts.len());
    for (name, content) in artifacts {
        let path = run.out_dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        outputs.push(ManifestEntry { path: name.clone(), sha256: sha256_hex(content.as_bytes()) });
    }
    let manifest = Manifest {
        inputs: ManifestInputs {
            config: run.config_path.display().to_string(),
            sha256: run.config_sha256.clone(),
        },
        options: &run.options,
        outputs,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let path = run.out_dir.join("manifest.json");
    std::fs::write(&path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_solve(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let cone = run.cone.clone().expect("validated");
    let (grid, policy) =
        opportunity::solve_opportunity(&run.model, |_| cone.clone(), &solve_options(run))
            .map_err(solver_err)?;
    Ok(vec![
        ("opportunity.csv".into(), opportunity::to_csv(&grid, &policy)),
        (
            "plot_l_plus.csv".into(),
            simulate::two_column_csv("t", "L_plus", &grid.times, &grid.l_plus),
        ),
        (
            "plot_l_minus.csv".into(),
            simulate::two_column_csv("t", "L_minus", &grid.times, &grid.l_minus),
        ),
    ])
}

fn cmd_unconstrained(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let (grid, policy, adj) =
        opportunity::solve_unconstrained(&run.model, &solve_options(run)).map_err(solver_err)?;
    let summary = serde_json::json!({
        "a_bar": adj.a_bar,
        "rate": adj.rate,
        "l_at_zero": grid.l_plus[0],
    });
    Ok(vec![
        ("opportunity.csv".into(), opportunity::to_csv(&grid, &policy)),
        (
            "plot_l_plus.csv".into(),
            simulate::two_column_csv("t", "L_plus", &grid.times, &grid.l_plus),
        ),
        (
            "plot_l_minus.csv".into(),
            simulate::two_column_csv("t", "L_minus", &grid.times, &grid.l_minus),
        ),
        ("summary.json".into(), serde_json::to_string_pretty(&summary).unwrap()),
    ])
}

fn cmd_simulate(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let cone = run.cone.clone().expect("validated");
    let (_, policy) =
        opportunity::solve_opportunity(&run.model, |_| cone.clone(), &solve_options(run))
            .map_err(solver_err)?;
    let o = &run.options;
    let form = match (o.m, o.gamma) {
        (Some(m), _) => Some(MarkowitzForm::TargetMean { m }),
        (None, Some(gamma)) => Some(MarkowitzForm::RiskAversion { gamma }),
        (None, None) => None,
    };
    let (terminals, x_eff, summary) = match form {
        Some(form) => {
            let sol =
                simulate::markowitz_from_base(&run.model, &policy, o.x, form, o.mc_paths, o.seed)
                    .map_err(solver_err)?;
            // evaluation paths use a stream range disjoint from estimation
            let mut evals = Vec::with_capacity(o.mc_paths);
            for p in 0..o.mc_paths {
                let path = simulate::sample_path(
                    &run.model,
                    o.n_steps,
                    o.seed,
                    (o.mc_paths + p) as u64,
                );
                let w = simulate::simulate_wealth(-1.0, &policy, &path).map_err(solver_err)?;
                evals.push(sol.terminal_wealth(*w.values.last().unwrap()));
            }
            let stats = simulate::sample_stats(&evals);
            let summary = serde_json::json!({
                "kind": match form {
                    MarkowitzForm::TargetMean { .. } => "markowitz-target-mean",
                    MarkowitzForm::RiskAversion { .. } => "markowitz-risk-aversion",
                },
                "x": o.x,
                "m": o.m,
                "gamma": o.gamma,
                "e_hat": sol.e_hat,
                "e_stderr": sol.e_stderr,
                "scale": sol.scale,
                "tilde_m": sol.tilde_m,
                "mean": stats.mean,
                "variance": stats.variance,
                "stderr": stats.stderr,
            });
            (evals, o.x, summary)
        }
        None => {
            let terminals =
                simulate::base_terminals(&run.model, &policy, o.n_steps, o.mc_paths, o.seed)
                    .map_err(solver_err)?;
            let stats = simulate::sample_stats(&terminals);
            let summary = serde_json::json!({
                "kind": "base",
                "x": -1.0,
                "mean": stats.mean,
                "variance": stats.variance,
                "stderr": stats.stderr,
            });
            (terminals, -1.0, summary)
        }
    };
    Ok(vec![
        ("simulate.csv".into(), simulate::path_summary_csv(&terminals, x_eff)),
        ("summary.json".into(), serde_json::to_string_pretty(&summary).unwrap()),
    ])
}

fn cmd_frontier(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let cone = run.cone.clone().expect("validated");
    let (_, policy) =
        opportunity::solve_opportunity(&run.model, |_| cone.clone(), &solve_options(run))
            .map_err(solver_err)?;
    let o = &run.options;
    let rows =
        simulate::efficient_frontier(&run.model, &policy, o.x, &o.m_grid, o.mc_paths, o.seed)
            .map_err(solver_err)?;
    let ms: Vec<f64> = rows.iter().map(|r| r.m).collect();
    let vars: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    Ok(vec![
        ("frontier.csv".into(), simulate::frontier_csv(&rows)),
        ("plot_frontier.csv".into(), simulate::two_column_csv("m", "variance", &ms, &vars)),
    ])
}

#[derive(Serialize)]
struct CompareRow {
    n: usize,
    err: f64,
}

#[derive(Serialize)]
struct CompareReport {
    max_err_plus: f64,
    max_err_minus: f64,
    table: Vec<CompareRow>,
}

fn cmd_oracle_compare(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let cone = run.cone.clone().expect("validated");
    let o = &run.options;
    let mut table = Vec::new();
    let mut finest: Option<(usize, String, oracle::OdeComparison)> = None;
    for &n in &o.oracle_steps {
        let mut tree = oracle::discretize(&run.model, n, o.gauss_points).map_err(solver_err)?;
        let policy = oracle::dp_backward(&mut tree, &cone, &MinimizeOptions::default())
            .map_err(solver_err)?;
        // reference grid: a multiple of the tree grid at least n_steps fine
        let mult = o.n_steps.div_ceil(n).max(1);
        let opts = SolveOptions { n_steps: n * mult, ..solve_options(run) };
        let (grid, _) = opportunity::solve_opportunity(&run.model, |_| cone.clone(), &opts)
            .map_err(solver_err)?;
        let cmp = oracle::compare_to_ode(&tree, &grid).map_err(solver_err)?;
        table.push(CompareRow { n, err: cmp.max_err_plus.max(cmp.max_err_minus) });
        if finest.as_ref().is_none_or(|(fin, _, _)| n > *fin) {
            finest = Some((n, oracle::tree_csv(&tree, &policy), cmp));
        }
    }
    let (_, tree_csv, cmp) = finest.expect("oracle_steps validated nonempty");
    let report = CompareReport {
        max_err_plus: cmp.max_err_plus,
        max_err_minus: cmp.max_err_minus,
        table,
    };
    Ok(vec![
        ("oracle_compare.json".into(), serde_json::to_string_pretty(&report).unwrap()),
        ("tree.csv".into(), tree_csv),
    ])
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = match &cli.command {
        Command::Solve(a)
        | Command::Unconstrained(a)
        | Command::Simulate(a)
        | Command::Frontier(a)
        | Command::OracleCompare(a) => a,
    };
    let run = load_run(&cli.command, args)?;
    let artifacts = match &cli.command {
        Command::Solve(_) => cmd_solve(&run)?,
        Command::Unconstrained(_) => cmd_unconstrained(&run)?,
        Command::Simulate(_) => cmd_simulate(&run)?,
        Command::Frontier(_) => cmd_frontier(&run)?,
        Command::OracleCompare(_) => cmd_oracle_compare(&run)?,
    };
    write_artifacts(&run, &artifacts)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
