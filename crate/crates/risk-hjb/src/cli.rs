//! Command-line front end: `check`, `solve`, `simulate`, `evaluate`,
//! `compare`, and `oracle-compare`, all driven by one TOML config whose
//! keys can be overridden with repeated `--set section.key=value` flags.
//!
//! Exit codes: 0 success, 1 usage/config, 2 numerical failure,
//! 3 assumption failure. `RISK_HJB_WORKERS` caps the worker pool; results
//! are byte-identical for any worker count. Payload artifacts are
//! deterministic; wall-clock data goes to the `run_meta.json` sidecar.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::control::minimizing_selector;
use crate::ergodic::{
    compute_qbu, ergodic_residual, solve_ergodic, stationary_strategy, ErgodicSolution,
};
use crate::error::{Error, Result};
use crate::hjb::{
    criterion_from_value, extract_optimal_strategy, psi_residual, solve_finite_horizon,
    StrategyField, ValueField,
};
use crate::market::{check_lyapunov, validate_assumptions, ControlBox, LyapunovCandidate};
use crate::oracles::{merton_constant_oracle, riccati_oracle};
use crate::report;
use crate::sim::{
    compare_strategies, estimate_criterion_ergodic, estimate_criterion_finite, simulate,
    ConstantFractions, ScaledStrategy, StrategyRule,
};

#[derive(Parser)]
#[command(
    name = "risk-hjb",
    version,
    about = "Risk-sensitive portfolio optimization: HJB solves, ergodic rates, Monte Carlo checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on the grid (exit 3 on failure)
    Check(CommonArgs),
    /// Solve the finite-horizon or ergodic problem and write the fields
    Solve(SolveArgs),
    /// Simulate factor/wealth paths under a strategy
    Simulate(CommonArgs),
    /// Estimate the risk-sensitive criterion under a strategy
    Evaluate(CommonArgs),
    /// Rank strategies under common random numbers
    Compare(CommonArgs),
    /// Cross-validate the solvers against the matching closed-form oracle
    OracleCompare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML)
    config: PathBuf,
    /// Override a config key: section.key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `finite` or `ergodic` (overrides solver.mode)
    #[arg(long)]
    mode: Option<String>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run_main() -> i32 {
    init_workers();
    let cli = Cli::parse();
    let started = Instant::now();
    let (name, result) = match &cli.command {
        Command::Check(a) => ("check", dispatch(a, None, cmd_check)),
        Command::Solve(a) => ("solve", dispatch(&a.common, a.mode.clone(), cmd_solve)),
        Command::Simulate(a) => ("simulate", dispatch(a, None, cmd_simulate)),
        Command::Evaluate(a) => ("evaluate", dispatch(a, None, cmd_evaluate)),
        Command::Compare(a) => ("compare", dispatch(a, None, cmd_compare)),
        Command::OracleCompare(a) => ("oracle-compare", dispatch(a, None, cmd_oracle_compare)),
    };
    match result {
        Ok(out_dir) => {
            write_meta(&out_dir, name, started.elapsed().as_secs_f64());
            0
        }
        Err(err) => {
            eprintln!("risk-hjb {name}: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) | Error::Io(_) => 1,
        Error::Assumption(_) => 3,
        _ => 2,
    }
}

fn init_workers() {
    if let Ok(text) = std::env::var("RISK_HJB_WORKERS") {
        if let Ok(workers) = text.trim().parse::<usize>() {
            if workers >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
            }
        }
    }
}

fn dispatch(
    args: &CommonArgs,
    mode: Option<String>,
    f: impl FnOnce(&RunConfig, &Path) -> Result<()>,
) -> Result<PathBuf> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects section.key=value (got '{s}')")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(mode) = mode {
        overrides.push(("solver.mode".into(), mode));
    }
    if let Some(out) = &args.out {
        overrides.push(("output.dir".into(), out.clone()));
    }
    let cfg = RunConfig::from_file(&args.config, &overrides)?;
    let out_dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out_dir)?;
    f(&cfg, &out_dir)?;
    Ok(out_dir)
}

#[derive(Serialize)]
struct RunMeta {
    command: String,
    elapsed_seconds: f64,
    started_unix: u64,
    workers: usize,
}

fn write_meta(out_dir: &Path, command: &str, elapsed: f64) {
    let meta = RunMeta {
        command: command.to_string(),
        elapsed_seconds: elapsed,
        started_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        workers: rayon::current_num_threads(),
    };
    let _ = report::write_json(&out_dir.join("run_meta.json"), &meta);
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CheckSummary {
    report: crate::market::AssumptionReport,
    lyapunov: Option<crate::market::LyapunovReport>,
    pass: bool,
}

fn cmd_check(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let report_data = validate_assumptions(&model, &grid, cfg.check.pair_samples)?;
    let lyapunov = if cfg.check.lyapunov_radii.is_empty() {
        None
    } else {
        let cand = LyapunovCandidate::norm_squared(model.n());
        let cbox = ControlBox::symmetric(
            model.m(),
            model.noise_dim(),
            cfg.check.h_box,
            cfg.check.omega_box,
        );
        Some(check_lyapunov(
            &model,
            &cand,
            &params,
            &cfg.check.lyapunov_radii,
            &cbox,
        )?)
    };
    let pass = report_data.pass_a1 && report_data.pass_a2;
    for w in &report_data.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "check: A1 {} (lipschitz a={:.4}), A2 {} (delta0={:.6e}){}",
        if report_data.pass_a1 { "pass" } else { "FAIL" },
        report_data.lipschitz_estimates.a,
        if report_data.pass_a2 { "pass" } else { "FAIL" },
        report_data.ellipticity_delta0,
        match &lyapunov {
            Some(l) => format!(
                ", A3 probe {}",
                if l.consistent_with_a3 { "consistent" } else { "not consistent (advisory)" }
            ),
            None => String::new(),
        }
    );
    let summary = CheckSummary {
        report: report_data,
        lyapunov,
        pass,
    };
    report::write_json(&out_dir.join("assumptions.json"), &summary)?;
    if pass {
        Ok(())
    } else {
        Err(Error::Assumption(
            "A1/A2 failed on the grid (see assumptions.json)".into(),
        ))
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FiniteSolveSummary {
    mode: String,
    theta: f64,
    horizon: f64,
    grid: crate::market::Grid,
    scheme: String,
    boundary: String,
    dt: f64,
    residual_interior_max: f64,
    psi_residual_interior_max: f64,
    max_abs_u: f64,
    u_start_center: f64,
    criterion_start_center: f64,
}

#[derive(Serialize)]
struct CheckpointSummary {
    horizon: f64,
    cauchy_increment: f64,
    rate_std: f64,
    rate_mean: f64,
}

#[derive(Serialize)]
struct ErgodicSolveSummary {
    mode: String,
    theta: f64,
    rho: f64,
    x0: Vec<f64>,
    converged_horizon: f64,
    tol_u: f64,
    tol_rho: f64,
    stationary_residual: f64,
    boundary_growth_fraction: f64,
    boundary_growth_ok: bool,
    history: Vec<CheckpointSummary>,
    qbu_lhs_max_per_checkpoint: Vec<f64>,
}

fn cmd_solve(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    match cfg.solver.mode.as_str() {
        "finite" => cmd_solve_finite(cfg, out_dir),
        "ergodic" => cmd_solve_ergodic(cfg, out_dir),
        other => Err(Error::Usage(format!("unknown solve mode '{other}'"))),
    }
}

fn solve_finite_field(cfg: &RunConfig) -> Result<(ValueField, StrategyField)> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let scfg = cfg.build_solver_config()?;
    let field = solve_finite_horizon(&model, &params, cfg.solver.horizon, &grid, &scfg)?;
    let strategy = extract_optimal_strategy(&field, &model, &params)?;
    Ok((field, strategy))
}

fn solve_ergodic_solution(cfg: &RunConfig) -> Result<(ErgodicSolution, StrategyField)> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let scfg = cfg.build_solver_config()?;
    let schedule = cfg.build_schedule();
    let x0 = if cfg.solver.x0.is_empty() {
        None
    } else {
        Some(cfg.solver.x0.clone())
    };
    let sol = solve_ergodic(&model, &params, &grid, x0.as_deref(), &scfg, &schedule)?;
    let strat = stationary_strategy(&sol, &model, &params)?;
    Ok((sol, strat))
}

fn cmd_solve_finite(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let (field, strategy) = solve_finite_field(cfg)?;
    let psi_res = psi_residual(&field, &model, &params)?;
    let center = grid.node(grid.center_node());
    let u_start = field.u.interpolate(0.0, &center)?;
    let criterion = criterion_from_value(&field, 0.0, &center, cfg.simulation.v0)?;
    println!(
        "solve finite: u(0, center) = {u_start:.6}, residual = {:.3e}, psi residual = {:.3e}",
        field.residual_interior_max, psi_res
    );
    if cfg.output.write_fields {
        report::write_value_field_csv(&out_dir.join("u.csv"), &field)?;
        report::write_strategy_field_csv(&out_dir.join("strategy.csv"), &strategy)?;
    }
    let summary = FiniteSolveSummary {
        mode: "finite".into(),
        theta: params.theta(),
        horizon: cfg.solver.horizon,
        grid: grid.clone(),
        scheme: cfg.solver.scheme.clone(),
        boundary: cfg.solver.boundary.clone(),
        dt: cfg.solver.dt,
        residual_interior_max: field.residual_interior_max,
        psi_residual_interior_max: psi_res,
        max_abs_u: field.u.max_abs(),
        u_start_center: u_start,
        criterion_start_center: criterion,
    };
    report::write_json(&out_dir.join("solve_summary.json"), &summary)
}

fn cmd_solve_ergodic(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let params = cfg.build_params()?;
    let (sol, strat) = solve_ergodic_solution(cfg)?;
    let res = ergodic_residual(&sol, &model, &params)?;
    println!(
        "solve ergodic: rho = {:.6} (converged at T = {}, stationary residual = {:.3e})",
        sol.rho, sol.converged_horizon, res
    );
    let grid = cfg.build_grid()?;
    let assumptions = validate_assumptions(&model, &grid, cfg.check.pair_samples)?;
    let qbu = if assumptions.ellipticity_delta0 > 0.0 {
        Some(compute_qbu(
            &model,
            &params,
            &sol,
            1.0,
            assumptions.ellipticity_delta0,
        )?)
    } else {
        None
    };
    if cfg.output.write_fields {
        report::write_bias_csv(&out_dir.join("u_hat.csv"), &sol.u_hat)?;
        report::write_strategy_field_csv(&out_dir.join("strategy_stationary.csv"), &strat)?;
        if let Some(qbu) = &qbu {
            report::write_qbu_csv(&out_dir.join("qbu.csv"), &sol, qbu)?;
        }
    }
    let summary = ErgodicSolveSummary {
        mode: "ergodic".into(),
        theta: params.theta(),
        rho: sol.rho,
        x0: sol.x0.clone(),
        converged_horizon: sol.converged_horizon,
        tol_u: cfg.solver.tol_u,
        tol_rho: cfg.solver.tol_rho,
        stationary_residual: res,
        boundary_growth_fraction: sol.boundary_growth_fraction,
        boundary_growth_ok: sol.boundary_growth_ok,
        history: sol
            .history
            .iter()
            .map(|c| CheckpointSummary {
                horizon: c.horizon,
                cauchy_increment: c.cauchy_increment,
                rate_std: c.rate_std,
                rate_mean: c.rate_mean,
            })
            .collect(),
        qbu_lhs_max_per_checkpoint: qbu.map(|q| q.lhs_max_per_checkpoint).unwrap_or_default(),
    };
    report::write_json(&out_dir.join("ergodic.json"), &summary)
}

// ---------------------------------------------------------------------------
// strategies from descriptors
// ---------------------------------------------------------------------------

struct StrategySet {
    finite: Option<Arc<StrategyField>>,
    stationary: Option<Arc<StrategyField>>,
}

impl StrategySet {
    fn new() -> Self {
        StrategySet {
            finite: None,
            stationary: None,
        }
    }

    fn finite(&mut self, cfg: &RunConfig) -> Result<Arc<StrategyField>> {
        if self.finite.is_none() {
            let (_, strategy) = solve_finite_field(cfg)?;
            self.finite = Some(Arc::new(strategy));
        }
        Ok(self.finite.clone().unwrap())
    }

    fn stationary(&mut self, cfg: &RunConfig) -> Result<Arc<StrategyField>> {
        if self.stationary.is_none() {
            let (_, strat) = solve_ergodic_solution(cfg)?;
            self.stationary = Some(Arc::new(strat));
        }
        Ok(self.stationary.clone().unwrap())
    }

    fn build(&mut self, descriptor: &str, cfg: &RunConfig, m: usize) -> Result<Box<dyn StrategyRule>> {
        if descriptor == "zero" {
            return Ok(Box::new(ConstantFractions::zero(m)));
        }
        if descriptor == "optimal" {
            return Ok(Box::new(self.finite(cfg)?));
        }
        if descriptor == "stationary" {
            return Ok(Box::new(self.stationary(cfg)?));
        }
        if let Some(factor) = descriptor.strip_prefix("scaled:") {
            let factor: f64 = factor
                .parse()
                .map_err(|_| Error::Usage(format!("bad scale in '{descriptor}'")))?;
            return Ok(Box::new(ScaledStrategy {
                inner: self.finite(cfg)?,
                factor,
            }));
        }
        if let Some(values) = descriptor.strip_prefix("const:") {
            let h: std::result::Result<Vec<f64>, _> =
                values.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let h = h.map_err(|_| Error::Usage(format!("bad fractions in '{descriptor}'")))?;
            if h.len() != m {
                return Err(Error::Usage(format!(
                    "'{descriptor}' needs {m} fractions"
                )));
            }
            return Ok(Box::new(ConstantFractions(h)));
        }
        Err(Error::Usage(format!(
            "unknown strategy '{descriptor}' (expected optimal | stationary | zero | scaled:<f> | const:<h,...>)"
        )))
    }
}

// ---------------------------------------------------------------------------
// simulate / evaluate / compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateSummary {
    strategy: String,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    dt: f64,
    terminal_log_v_mean: f64,
    terminal_log_v_std: f64,
    criterion: crate::sim::CriterionEstimate,
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let mut set = StrategySet::new();
    let strategy = set.build(&cfg.simulation.strategy, cfg, model.m())?;
    let x0 = cfg.sim_start(&grid)?;
    let sim_cfg = cfg.build_sim_config();
    let bundle = simulate(
        &model,
        strategy.as_ref(),
        &x0,
        cfg.simulation.v0,
        cfg.simulation.horizon,
        &sim_cfg,
    )?;
    let est = estimate_criterion_finite(&bundle, &params)?;
    if !est.reliable() {
        eprintln!(
            "warning: effective sample size {:.1} below 100; the exponential moment is variance-starved",
            est.ess
        );
    }
    let n = bundle.n_paths as f64;
    let mean: f64 = bundle.terminal_log_v().sum::<f64>() / n;
    let var: f64 = bundle
        .terminal_log_v()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    println!(
        "simulate: {} paths, terminal ln V mean = {mean:.6}, criterion = {:.6} +- {:.2e}",
        bundle.n_paths, est.value, est.std_error
    );
    if cfg.output.write_paths {
        report::write_paths_csv(&out_dir.join("paths.csv"), &bundle)?;
    }
    let summary = SimulateSummary {
        strategy: cfg.simulation.strategy.clone(),
        horizon: cfg.simulation.horizon,
        n_paths: bundle.n_paths,
        seed: sim_cfg.seed,
        dt: sim_cfg.dt,
        terminal_log_v_mean: mean,
        terminal_log_v_std: var.sqrt(),
        criterion: est,
    };
    report::write_json(&out_dir.join("simulate.json"), &summary)
}

#[derive(Serialize)]
struct EvaluateSummary {
    strategy: String,
    seed: u64,
    estimate: crate::sim::CriterionEstimate,
    /// Normalized criteria per horizon when a trend was requested.
    trend: Vec<crate::sim::CriterionEstimate>,
}

fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let mut set = StrategySet::new();
    let strategy = set.build(&cfg.simulation.strategy, cfg, model.m())?;
    let x0 = cfg.sim_start(&grid)?;
    let sim_cfg = cfg.build_sim_config();
    let bundle = simulate(
        &model,
        strategy.as_ref(),
        &x0,
        cfg.simulation.v0,
        cfg.simulation.horizon,
        &sim_cfg,
    )?;
    let est = estimate_criterion_finite(&bundle, &params)?;
    let trend = if cfg.simulation.horizons.is_empty() {
        Vec::new()
    } else {
        estimate_criterion_ergodic(
            &model,
            strategy.as_ref(),
            &x0,
            cfg.simulation.v0,
            &params,
            &sim_cfg,
            &cfg.simulation.horizons,
        )?
    };
    println!(
        "evaluate: J = {:.6} +- {:.2e} at T = {}",
        est.value, est.std_error, cfg.simulation.horizon
    );
    for t in &trend {
        println!("  T = {:>8}: J/T = {:.6} +- {:.2e}", t.horizon, t.value, t.std_error);
    }
    let summary = EvaluateSummary {
        strategy: cfg.simulation.strategy.clone(),
        seed: sim_cfg.seed,
        estimate: est,
        trend,
    };
    report::write_json(&out_dir.join("evaluate.json"), &summary)
}

fn cmd_compare(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    if cfg.compare.strategies.is_empty() {
        return Err(Error::Usage("compare.strategies is empty".into()));
    }
    let mut set = StrategySet::new();
    let mut built: Vec<(String, Box<dyn StrategyRule>)> = Vec::new();
    for descriptor in &cfg.compare.strategies {
        built.push((descriptor.clone(), set.build(descriptor, cfg, model.m())?));
    }
    let named: Vec<(&str, &dyn StrategyRule)> = built
        .iter()
        .map(|(name, rule)| (name.as_str(), rule.as_ref()))
        .collect();
    let x0 = cfg.sim_start(&grid)?;
    let table = compare_strategies(
        &model,
        &named,
        &x0,
        cfg.simulation.v0,
        cfg.simulation.horizon,
        &params,
        &cfg.build_sim_config(),
    )?;
    for row in &table.rows {
        println!(
            "compare: {:<12} J = {:.6} +- {:.2e}{}",
            row.name,
            row.value,
            row.std_error,
            if row.beats_reference { "  ** beats reference **" } else { "" }
        );
    }
    report::write_comparison_csv(&out_dir.join("comparison.csv"), &table)?;
    report::write_json(&out_dir.join("comparison.json"), &table)
}

// ---------------------------------------------------------------------------
// oracle-compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OracleCase {
    name: String,
    solver_value: f64,
    oracle_value: f64,
    abs_error: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct OracleCompareSummary {
    family: String,
    cases: Vec<OracleCase>,
    pass: bool,
}

fn cmd_oracle_compare(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let family = cfg.model.family.clone();
    let cases = match family.as_str() {
        "constant" => oracle_cases_constant(cfg)?,
        "linear" => oracle_cases_linear(cfg)?,
        other => {
            return Err(Error::Usage(format!(
                "no closed-form oracle for family '{other}' (expected constant or linear)"
            )))
        }
    };
    let pass = cases.iter().all(|c| c.pass);
    for c in &cases {
        println!(
            "oracle-compare: {:<24} solver {:#.8} vs oracle {:#.8} (|err| {:.3e} vs tol {:.1e}) {}",
            c.name,
            c.solver_value,
            c.oracle_value,
            c.abs_error,
            c.tolerance,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    let summary = OracleCompareSummary {
        family,
        cases,
        pass,
    };
    report::write_json(&out_dir.join("oracle_compare.json"), &summary)?;
    if pass {
        Ok(())
    } else {
        Err(Error::Solver(
            "oracle comparison failed configured tolerances (see oracle_compare.json)".into(),
        ))
    }
}

fn oracle_cases_constant(cfg: &RunConfig) -> Result<Vec<OracleCase>> {
    let model = cfg.build_model()?;
    if model.m() != 1 {
        return Err(Error::Usage(
            "the constant-coefficient oracle needs a single risky asset".into(),
        ));
    }
    let grid = cfg.build_grid()?;
    let params = cfg.build_params()?;
    let center = grid.node(grid.center_node());
    let sigma2 = {
        let s = model.sigma_at(&center)?;
        (&s * s.transpose())[(0, 0)]
    };
    let oracle = merton_constant_oracle(
        cfg.model.a0[0],
        cfg.model.r0,
        sigma2,
        params.theta(),
        cfg.solver.horizon,
        cfg.simulation.v0,
    )?;
    let mut cases = Vec::new();

    let h = minimizing_selector(&model, &center, &vec![0.0; model.n()], &params)?;
    cases.push(case(
        "minimizing_selector",
        h[0],
        oracle.h_star,
        cfg.oracle.tolerance_scalar,
    ));

    let (field, _) = solve_finite_field(cfg)?;
    let mut worst_node = 0.0f64;
    for i in 0..grid.node_count() {
        worst_node = worst_node.max((field.u.value(0, i) - oracle.rho * cfg.solver.horizon).abs());
    }
    cases.push(case(
        "finite_horizon_u0",
        field.u.value(0, grid.center_node()),
        oracle.rho * cfg.solver.horizon,
        cfg.oracle.tolerance_scalar,
    ));
    cases.push(case(
        "finite_horizon_u0_sup_error",
        worst_node,
        0.0,
        cfg.oracle.tolerance_scalar,
    ));

    let (sol, _) = solve_ergodic_solution(cfg)?;
    cases.push(case(
        "ergodic_rate",
        sol.rho,
        oracle.rho,
        cfg.oracle.tolerance_scalar,
    ));
    Ok(cases)
}

fn oracle_cases_linear(cfg: &RunConfig) -> Result<Vec<OracleCase>> {
    let spec = cfg.linear_spec()?;
    let params = cfg.build_params()?;
    let grid = cfg.build_grid()?;
    let oracle = riccati_oracle(&spec, &params, cfg.solver.horizon, cfg.oracle.time_steps)?;
    let (field, _) = solve_finite_field(cfg)?;
    let mut sup_err = 0.0f64;
    for &i in &grid.trust_region(crate::hjb::TRUST_MARGIN) {
        let x = grid.node(i);
        sup_err = sup_err.max((field.u.value(0, i) - oracle.eval(0.0, &x)).abs());
    }
    Ok(vec![case(
        "riccati_sup_error_t0",
        sup_err,
        0.0,
        cfg.oracle.tolerance_u,
    )])
}

fn case(name: &str, solver_value: f64, oracle_value: f64, tolerance: f64) -> OracleCase {
    let abs_error = (solver_value - oracle_value).abs();
    OracleCase {
        name: name.to_string(),
        solver_value,
        oracle_value,
        abs_error,
        tolerance,
        pass: abs_error <= tolerance,
    }
}
