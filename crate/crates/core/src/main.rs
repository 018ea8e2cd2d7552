//! Command-line entry point: solve, simulate, check, export,
//! validate-costs.
//!
//! Exit codes: 0 success, 1 usage, 2 validation failure, 3 numerical
//! failure (CFL, non-convergence, invalid paths), 4 check failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use impulse_game::bundle::{read_bundle, spec_hash, write_bundle, SolveBundle};
use impulse_game::intervention::Regime;
use impulse_game::problem::{load_problem, validate_costs, GameSpec, LoadOptions, SpecError};
use impulse_game::sim::{default_impulse_cap, estimate_value, simulate_path, split_seeds};
use impulse_game::solver::{solve, SolveError, SolveOptions, SpaceTimeGrid};
use impulse_game::strategy::{from_policy, validate_policy_actions, Player};
use impulse_game::verify::{run_checks, CheckConfig, VerifyError};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "impulse-game",
    about = "Solve, simulate and cross-check two-player zero-sum impulse games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Problem config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master RNG seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Accept the config even if the cost-structure validation fails.
    #[arg(long)]
    allow_cost_violation: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward equation and write a value/policy bundle.
    Solve {
        #[command(flatten)]
        common: CommonFlags,
        /// Space nodes per axis and time steps, e.g. 301,64 or 51x51,32.
        #[arg(long, default_value = "301,64")]
        grid: String,
        /// Fixed-point tolerance override.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        /// Probe points to print V(0, x) at; comma-separated coordinates,
        /// repeatable. Defaults to the domain center.
        #[arg(long)]
        probe: Vec<String>,
    },
    /// Simulate the controlled SDE under bundle-extracted strategies.
    Simulate {
        #[command(flatten)]
        common: CommonFlags,
        /// Bundle directory produced by solve.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        /// Start state, comma-separated; defaults to the domain center.
        #[arg(long)]
        x0: Option<String>,
        #[arg(long, default_value_t = 20_000)]
        n_paths: usize,
        /// Simulation step size.
        #[arg(long, default_value_t = 1.0 / 256.0)]
        delta: f64,
        /// Per-path impulse cap; defaults to a spec-derived heuristic.
        #[arg(long)]
        max_impulses: Option<usize>,
        /// Dump the first N paths as CSV files.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
    },
    /// Run the verification battery against a bundle.
    Check {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        bundle: PathBuf,
        /// Comma-separated check names; default runs everything.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 20_000)]
        n_paths: usize,
        #[arg(long, default_value_t = 1.0 / 256.0)]
        delta: f64,
        /// Scheme-error budget constant; defaults to 5 (1 + Lip g).
        #[arg(long)]
        budget_constant: Option<f64>,
        /// Probe point for the stochastic checks.
        #[arg(long)]
        x0: Option<String>,
    },
    /// Export value slices and region maps as CSV.
    Export {
        /// Bundle directory produced by solve.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slice indices, comma-separated, or "all".
        #[arg(long, default_value = "0")]
        slices: String,
    },
    /// Sample the cost-structure conditions and report the margins.
    ValidateCosts {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = impulse_game::problem::DEFAULT_COST_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config_path: Option<String>,
    config_hash: Option<String>,
    grid_nodes: Option<Vec<usize>>,
    grid_steps: Option<usize>,
    seed: Option<u64>,
    tolerances: serde_json::Value,
    out_dir: String,
    started_unix_ms: u128,
    finished_unix_ms: Option<u128>,
    status: String,
    outputs: Vec<String>,
}

impl RunManifest {
    fn start(subcommand: &str, out_dir: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: None,
            config_hash: None,
            grid_nodes: None,
            grid_steps: None,
            seed: None,
            tolerances: serde_json::Value::Null,
            out_dir: out_dir.display().to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            status: "running".to_string(),
            outputs: Vec::new(),
        }
    }

    fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::new(EXIT_VALIDATION, format!("manifest: {e}")))?;
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(())
    }

    fn finalize(mut self, out_dir: &Path, outputs: Vec<String>) -> Result<(), CliError> {
        self.finished_unix_ms = Some(now_ms());
        self.status = "complete".to_string();
        self.outputs = outputs;
        self.outputs.push("manifest.json".to_string());
        self.write(out_dir)
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: String) -> Self {
        CliError { code, message }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::new(EXIT_USAGE, format!("{}: {e}", path.display()))
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::new(EXIT_VALIDATION, render_chain(&e))
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::new(EXIT_NUMERICAL, render_chain(&e))
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        let code = match &e {
            VerifyError::Input(_) | VerifyError::SizeLimit(_) => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        };
        CliError::new(code, render_chain(&e))
    }
}

impl From<impulse_game::sim::SimError> for CliError {
    fn from(e: impulse_game::sim::SimError) -> Self {
        CliError::new(EXIT_NUMERICAL, render_chain(&e))
    }
}

impl From<impulse_game::bundle::BundleError> for CliError {
    fn from(e: impulse_game::bundle::BundleError) -> Self {
        CliError::new(EXIT_VALIDATION, render_chain(&e))
    }
}

fn render_chain(err: &dyn std::error::Error) -> String {
    let mut out = err.to_string();
    let mut source = err.source();
    while let Some(e) = source {
        out.push_str(&format!("\n  caused by: {e}"));
        source = e.source();
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's rendered help/usage text, but with our exit convention.
            let _ = e.print();
            if e.use_stderr() {
                return ExitCode::from(EXIT_USAGE);
            }
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::new(
            EXIT_USAGE,
            format!("cannot read config {}: {e}\nusage: pass --config <file>", path.display()),
        )
    })
}

fn load_spec(config_text: &str, allow_cost_violation: bool) -> Result<GameSpec, CliError> {
    let opts = LoadOptions { enforce_costs: !allow_cost_violation, ..Default::default() };
    Ok(load_problem(config_text, &opts)?)
}

fn parse_grid(text: &str, dim: usize) -> Result<(Vec<usize>, usize), CliError> {
    let usage = || {
        CliError::new(
            EXIT_USAGE,
            format!("--grid expects N,K or N1xN2x..,K (got `{text}`)"),
        )
    };
    let (nodes_part, steps_part) = text.split_once(',').ok_or_else(usage)?;
    let steps: usize = steps_part.trim().parse().map_err(|_| usage())?;
    let nodes: Vec<usize> = nodes_part
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage())?;
    let nodes = if nodes.len() == 1 { vec![nodes[0]; dim] } else { nodes };
    if nodes.len() != dim || steps == 0 {
        return Err(usage());
    }
    Ok((nodes, steps))
}

fn parse_point(text: &str, dim: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| {
        CliError::new(EXIT_USAGE, format!("{what} expects comma-separated numbers, got `{text}`"))
    })?;
    if vals.len() != dim {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("{what} expects {dim} coordinate(s), got {}", vals.len()),
        ));
    }
    Ok(vals)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, grid, tol, max_iter, probe } => {
            cmd_solve(common, grid, tol, max_iter, probe)
        }
        Command::Simulate {
            common,
            bundle,
            t0,
            x0,
            n_paths,
            delta,
            max_impulses,
            dump_paths,
        } => cmd_simulate(common, bundle, t0, x0, n_paths, delta, max_impulses, dump_paths),
        Command::Check { common, bundle, only, n_paths, delta, budget_constant, x0 } => {
            cmd_check(common, bundle, only, n_paths, delta, budget_constant, x0)
        }
        Command::Export { bundle, out, slices } => cmd_export(bundle, out, slices),
        Command::ValidateCosts { config, samples, seed } => {
            cmd_validate_costs(config, samples, seed)
        }
    }
}

fn cmd_solve(
    common: CommonFlags,
    grid_flag: String,
    tol: Option<f64>,
    max_iter: usize,
    probe: Vec<String>,
) -> Result<(), CliError> {
    let config_text = read_config(&common.config)?;
    let spec = load_spec(&config_text, common.allow_cost_violation)?;
    let (nodes, steps) = parse_grid(&grid_flag, spec.dim)?;

    let mut manifest = RunManifest::start("solve", &common.out);
    manifest.config_path = Some(common.config.display().to_string());
    manifest.config_hash = Some(spec_hash(&config_text));
    manifest.grid_nodes = Some(nodes.clone());
    manifest.grid_steps = Some(steps);
    manifest.seed = Some(common.seed);
    manifest.tolerances = serde_json::json!({ "fixed_point_tol": tol, "max_iter": max_iter });
    manifest.write(&common.out)?;

    let grid = SpaceTimeGrid::new(&spec, &nodes, steps)?;
    let opts = SolveOptions { tol, max_iter, ..Default::default() };
    let result = solve(&spec, &grid, &opts)?;
    write_bundle(&common.out, &result, &grid, &spec_hash(&config_text), tol, max_iter)
        .map_err(CliError::from)?;

    let probes: Vec<Vec<f64>> = if probe.is_empty() {
        vec![spec.domain_center()]
    } else {
        probe
            .iter()
            .map(|p| parse_point(p, spec.dim, "--probe"))
            .collect::<Result<_, _>>()?
    };
    for point in &probes {
        match result.field.slices[0].interp(point) {
            Some(v) => println!("V(0, {point:?}) = {v:.10}"),
            None => println!("V(0, {point:?}) = outside domain"),
        }
    }

    manifest.finalize(
        &common.out,
        vec!["bundle.json".into(), "values.bin".into(), "policies.bin".into()],
    )?;
    Ok(())
}

fn check_bundle_matches(bundle: &SolveBundle, config_text: &str) -> Result<(), CliError> {
    let expected = spec_hash(config_text);
    if bundle.meta.spec_hash != expected {
        return Err(CliError::new(
            EXIT_VALIDATION,
            format!(
                "bundle was solved from a different config (bundle hash {}, config hash {expected})",
                bundle.meta.spec_hash
            ),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: CommonFlags,
    bundle_dir: PathBuf,
    t0: f64,
    x0: Option<String>,
    n_paths: usize,
    delta: f64,
    max_impulses: Option<usize>,
    dump_paths: usize,
) -> Result<(), CliError> {
    let config_text = read_config(&common.config)?;
    let spec = load_spec(&config_text, common.allow_cost_violation)?;
    let bundle = read_bundle(&bundle_dir)?;
    check_bundle_matches(&bundle, &config_text)?;

    let x0 = match x0 {
        Some(text) => parse_point(&text, spec.dim, "--x0")?,
        None => spec.domain_center(),
    };
    let cap = match max_impulses {
        Some(c) => c,
        None => default_impulse_cap(&spec)?,
    };

    let grid = bundle.grid();
    let actions = spec
        .actions
        .build_grid()
        .map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
    validate_policy_actions(&bundle.policies, &actions)
        .map_err(|m| CliError::new(EXIT_VALIDATION, m))?;
    let strat_i = from_policy(&bundle.policies, &grid, &actions, Player::I);
    let strat_ii = from_policy(&bundle.policies, &grid, &actions, Player::II);

    let mut manifest = RunManifest::start("simulate", &common.out);
    manifest.config_path = Some(common.config.display().to_string());
    manifest.config_hash = Some(spec_hash(&config_text));
    manifest.seed = Some(common.seed);
    manifest.tolerances = serde_json::json!({
        "delta": delta, "n_paths": n_paths, "max_impulses": cap, "t0": t0, "x0": x0,
        "policy_hash": strat_i.source_hash,
    });
    manifest.write(&common.out)?;

    let estimate = estimate_value(
        &spec, &strat_i, &strat_ii, t0, &x0, delta, n_paths, common.seed, cap,
    )?;
    let mut outputs = vec!["estimate.json".to_string()];
    let estimate_json = serde_json::to_string_pretty(&estimate)
        .map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
    write_text(&common.out.join("estimate.json"), &estimate_json)?;
    println!(
        "J(t0={t0}, x0={x0:?}) = {:.6} +/- {:.6} (stderr, {} paths)",
        estimate.mean, estimate.stderr, estimate.n_paths
    );

    if dump_paths > 0 {
        let seeds = split_seeds(common.seed, dump_paths);
        for (i, path_seed) in seeds.into_iter().enumerate() {
            let path =
                simulate_path(&spec, &strat_i, &strat_ii, t0, &x0, delta, path_seed, cap)?;
            let mut csv = String::from("step,t");
            for d in 1..=spec.dim {
                csv.push_str(&format!(",x{d}"));
            }
            csv.push_str(",event_player,event_charged\n");
            for (k, state) in path.states.iter().enumerate() {
                let t = path.time_at(k);
                let event = path
                    .events
                    .iter()
                    .find(|e| (e.time - t).abs() < 0.5 * delta);
                let (who, charged) = match event {
                    Some(e) => (
                        match e.player {
                            Player::I => "I",
                            Player::II => "II",
                        },
                        if e.charged { "1" } else { "0" },
                    ),
                    None => ("", ""),
                };
                csv.push_str(&format!("{k},{t}"));
                for v in state {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push_str(&format!(",{who},{charged}\n"));
            }
            let name = format!("path_{i:04}.csv");
            write_text(&common.out.join(&name), &csv)?;
            outputs.push(name);
        }
    }
    manifest.finalize(&common.out, outputs)?;
    Ok(())
}

fn cmd_check(
    common: CommonFlags,
    bundle_dir: PathBuf,
    only: Option<String>,
    n_paths: usize,
    delta: f64,
    budget_constant: Option<f64>,
    x0: Option<String>,
) -> Result<(), CliError> {
    let config_text = read_config(&common.config)?;
    // The check command never refuses a config over its cost structure:
    // the violation surfaces as a failing check instead.
    let spec = load_spec(&config_text, true)?;
    let bundle = read_bundle(&bundle_dir)?;
    check_bundle_matches(&bundle, &config_text)?;
    let grid = bundle.grid();
    let actions = spec
        .actions
        .build_grid()
        .map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
    validate_policy_actions(&bundle.policies, &actions)
        .map_err(|m| CliError::new(EXIT_VALIDATION, m))?;

    let mut manifest = RunManifest::start("check", &common.out);
    manifest.config_path = Some(common.config.display().to_string());
    manifest.config_hash = Some(spec_hash(&config_text));
    manifest.grid_nodes = Some(grid.space.iter().map(|a| a.count).collect());
    manifest.grid_steps = Some(grid.steps);
    manifest.seed = Some(common.seed);
    manifest.tolerances =
        serde_json::json!({ "n_paths": n_paths, "delta": delta, "budget_constant": budget_constant });
    manifest.write(&common.out)?;

    let probe = match x0 {
        Some(text) => Some(parse_point(&text, spec.dim, "--x0")?),
        None => None,
    };
    let cfg = CheckConfig {
        seed: common.seed,
        n_paths,
        delta,
        budget_constant,
        probe,
        only: only.map(|names| names.split(',').map(|s| s.trim().to_string()).collect()),
        ..Default::default()
    };
    let solve_opts = SolveOptions {
        tol: bundle.meta.tol,
        max_iter: bundle.meta.max_iter,
        ..Default::default()
    };
    let report = run_checks(&spec, &grid, &bundle.field, &bundle.policies, &solve_opts, &cfg)?;

    for check in &report.checks {
        let status = if check.pass { "PASS" } else if check.advisory { "WARN" } else { "FAIL" };
        println!(
            "{status} {name}: measured {measured:.6e} vs tolerance {tolerance:.6e} ({context})",
            name = check.name,
            measured = check.measured,
            tolerance = check.tolerance,
            context = check.context
        );
    }
    let json = report
        .to_json()
        .map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
    write_text(&common.out.join("report.json"), &json)?;
    manifest.finalize(&common.out, vec!["report.json".to_string()])?;

    if report.all_required_pass() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_CHECK,
            format!("checks failed: {}", report.failed_names().join(", ")),
        ))
    }
}

fn cmd_export(bundle_dir: PathBuf, out: PathBuf, slices: String) -> Result<(), CliError> {
    let bundle = read_bundle(&bundle_dir)?;
    let n_slices = bundle.field.slices.len();
    let indices: Vec<usize> = if slices.trim() == "all" {
        (0..n_slices).collect()
    } else {
        let parsed: Result<Vec<usize>, _> =
            slices.split(',').map(|p| p.trim().parse::<usize>()).collect();
        parsed.map_err(|_| {
            CliError::new(EXIT_USAGE, format!("--slices expects indices or `all`, got `{slices}`"))
        })?
    };
    for &k in &indices {
        if k >= n_slices {
            return Err(CliError::new(
                EXIT_USAGE,
                format!("slice index {k} out of range (bundle has {n_slices} slices)"),
            ));
        }
    }
    let manifest = RunManifest::start("export", &out);
    manifest.write(&out)?;
    let dim = bundle.field.slices[0].dim();
    let mut outputs = Vec::new();
    for &k in &indices {
        let slice = &bundle.field.slices[k];
        let policy = &bundle.policies[k];
        let mut coords = vec![0.0; dim];
        let header: String = (1..=dim).map(|d| format!("x{d},")).collect::<String>();

        let mut values_csv = format!("{header}value\n");
        let mut regions_csv = format!("{header}label\n");
        for node in 0..slice.node_count() {
            slice.node_coords(node, &mut coords);
            let coord_text: String = coords.iter().map(|c| format!("{c},")).collect();
            values_csv.push_str(&format!("{coord_text}{}\n", slice.values[node]));
            regions_csv.push_str(&format!(
                "{coord_text}{}\n",
                match policy.regimes[node] {
                    Regime::Continue => 0,
                    Regime::ImpulseI { .. } => 1,
                    Regime::ImpulseII { .. } => 2,
                }
            ));
        }
        let values_name = format!("slice_{k}.csv");
        let regions_name = format!("regions_{k}.csv");
        write_text(&out.join(&values_name), &values_csv)?;
        write_text(&out.join(&regions_name), &regions_csv)?;
        outputs.push(values_name);
        outputs.push(regions_name);
    }
    manifest.finalize(&out, outputs)?;
    Ok(())
}

fn cmd_validate_costs(config: PathBuf, samples: usize, seed: u64) -> Result<(), CliError> {
    let config_text = read_config(&config)?;
    // Parse and structurally validate, but let the cost report speak.
    let spec = load_spec(&config_text, true)?;
    let report = validate_costs(&spec, samples, seed);
    for check in &report.checks {
        let status = if check.pass { "PASS" } else if check.advisory { "WARN" } else { "FAIL" };
        println!(
            "{status} {}: worst margin {:.6e} ({})",
            check.name, check.measured, check.context
        );
    }
    if report.all_required_pass() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_CHECK,
            format!("cost structure violated: {}", report.failed_names().join(", ")),
        ))
    }
}
