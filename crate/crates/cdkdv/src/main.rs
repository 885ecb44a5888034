//! Command-line front end: algebra tables and audits, simulation runs,
//! soliton evaluation/certification, transformation verifiers, conserved
//! quantities and the derivation-algebra tools.
//!
//! Data goes to CSV files (or stdout for the table dumps); every other
//! command prints a JSON report to stdout and exits nonzero when an
//! asserted check fails.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cdkdv::algebra::{audit_power_associative, AlgebraProperty};
use cdkdv::config::{parse_config, prepare_run, RunConfig};
use cdkdv::io::{fmt_f64, parse_cd_coeffs, read_run_csv, write_conserved_csv, write_run_csv};
use cdkdv::solitons::{
    evolution_residual, kdv25_residual_one, kdv25_residual_two, make_initial_field,
    ode24_residual, SolitonSpec, SolutionJet, TwoSolitonSpec,
};
use cdkdv::solver::{simulate, spatial_derivative, Field, Grid, SolverError};
use cdkdv::symmetry::{derivation, g2_basis, invariance_residual};
use cdkdv::transforms::{
    backlund_pair_from_soliton, conserved, gardner_consistency, gardner_forward,
    gardner_real_charge, lax_residual,
};
use cdkdv::{Algebra, CdNumber};

#[derive(Parser)]
#[command(name = "cdkdv", version, about = "Cayley-Dickson valued KdV laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Basis tables and property audits of the algebra tower
    Algebra {
        #[command(subcommand)]
        cmd: AlgebraCmd,
    },
    /// Integrate an evolution equation from a JSON config
    Simulate(SimulateArgs),
    /// Evaluate closed-form solitons, optionally certifying their residuals
    Soliton(SolitonArgs),
    /// Residual verification of the transformation structure
    Verify {
        #[command(subcommand)]
        cmd: VerifyCmd,
    },
    /// Conserved quantities of a stored trajectory
    Conserved(ConservedArgs),
    /// Octonion derivation algebra: basis, stabilizers, invariance slopes
    Symmetry {
        #[command(subcommand)]
        cmd: SymmetryCmd,
    },
}

#[derive(Subcommand)]
enum AlgebraCmd {
    /// Dump the sign/index tables as CSV (cell "-5" means -e_5)
    Table {
        #[arg(long)]
        level: u32,
    },
    /// Audit an algebraic law, reporting a counterexample if it fails
    Audit {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        property: String,
        /// Seed for the sampled power-associativity audit
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration (repeatable for sweeps)
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Run up to this many configs in parallel
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SolitonArgs {
    #[arg(long, default_value_t = 3)]
    level: u32,
    #[arg(long)]
    lambda: f64,
    /// Comma-separated coefficients of alpha
    #[arg(long)]
    alpha: String,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    beta: Option<String>,
    /// Sampling grid "N,L" for --out
    #[arg(long)]
    grid: Option<String>,
    /// Peak positions at t = 0 (defaults keep the raw alpha scale)
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long)]
    peak2: Option<f64>,
    /// Snapshot time for --out
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// External field for the rotated-equation residual
    #[arg(long)]
    v: Option<String>,
    /// Print residual certification as JSON and gate the exit code on it
    #[arg(long)]
    certify: bool,
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Coupled potential equations for (w1, 0, eta = 3 lambda^2)
    Backlund {
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate the epsilon-deformed equation and map the trajectory back
    Gardner {
        #[arg(long)]
        config: PathBuf,
    },
    /// Operator compatibility residual on a closed-form soliton
    Lax {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct ConservedArgs {
    #[arg(long)]
    input: PathBuf,
    /// Write the H-columns here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SymmetryCmd {
    /// Dump the fourteen basis derivation matrices as CSV
    Basis {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stabilizer dimension and null-space basis of a fixed element
    Stabilizer {
        #[arg(long)]
        v: String,
    },
    /// Residual slope of a perturbed trajectory snapshot
    Invariance {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        v: String,
        #[arg(long)]
        mu: f64,
        /// Basis pair (i,j) generating the perturbing derivation
        #[arg(long, default_value = "1,2")]
        pair: String,
    },
}

fn main() {
    let cli = Cli::parse();
    let started = Instant::now();
    let code = match run(cli, started) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    };
    std::process::exit(code);
}

fn env_seed(default: u64) -> u64 {
    match std::env::var("CDKDV_SEED") {
        Ok(text) => text.parse().unwrap_or(default),
        Err(_) => default,
    }
}

fn emit(report: &Value) {
    println!("{}", serde_json::to_string_pretty(report).expect("serializable"));
}

fn run(cli: Cli, started: Instant) -> Result<i32, String> {
    match cli.command {
        Command::Algebra { cmd } => run_algebra(cmd, started),
        Command::Simulate(args) => run_simulate(args, started),
        Command::Soliton(args) => run_soliton(args, started),
        Command::Verify { cmd } => run_verify(cmd, started),
        Command::Conserved(args) => run_conserved(args, started),
        Command::Symmetry { cmd } => run_symmetry(cmd, started),
    }
}

fn run_algebra(cmd: AlgebraCmd, started: Instant) -> Result<i32, String> {
    match cmd {
        AlgebraCmd::Table { level } => {
            let alg = Algebra::new(level).map_err(|e| e.to_string())?;
            for i in 0..alg.dim() {
                let row: Vec<String> = (0..alg.dim())
                    .map(|j| {
                        let (s, k) = alg.basis_product(i, j);
                        if s < 0 {
                            format!("-{k}")
                        } else {
                            format!("{k}")
                        }
                    })
                    .collect();
                println!("{}", row.join(","));
            }
            Ok(0)
        }
        AlgebraCmd::Audit {
            level,
            property,
            seed,
        } => {
            let alg = Algebra::new(level).map_err(|e| e.to_string())?;
            let property: AlgebraProperty = property.parse()?;
            let report = if property == AlgebraProperty::PowerAssociative {
                audit_power_associative(&alg, env_seed(seed))
            } else {
                cdkdv::algebra::audit_property(&alg, property)
            };
            emit(&json!({
                "command": "algebra audit",
                "level": level,
                "property": property,
                "holds": report.holds,
                "counterexample": report.counterexample,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(0)
        }
    }
}

struct RunOutcome {
    config_path: String,
    report: Value,
    failed: bool,
}

fn simulate_one(path: &PathBuf, started: Instant) -> RunOutcome {
    let config_path = path.display().to_string();
    let fail = |message: String| RunOutcome {
        config_path: config_path.clone(),
        report: json!({"config": config_path, "ok": false, "error": message}),
        failed: true,
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(format!("cannot read config: {e}")),
    };
    let config: RunConfig = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let prepared = match prepare_run(&config, |p| {
        fs::read_to_string(p).map_err(|e| e.to_string())
    }) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    if let Some(boundary) = prepared.boundary_decay {
        if boundary > 1e-12 {
            eprintln!(
                "warning: initial data only decays to {boundary:.3e} at the domain edge \
                 (budget 1e-12); enlarge L or increase lambda"
            );
        }
    }
    let write_outputs = |record: &cdkdv::RunRecord| -> Result<(), String> {
        let mut run_file = fs::File::create(&config.out)
            .map_err(|e| format!("cannot create {}: {e}", config.out))?;
        write_run_csv(record, &mut run_file).map_err(|e| e.to_string())?;
        let mut cons_file = fs::File::create(&config.conserved_out)
            .map_err(|e| format!("cannot create {}: {e}", config.conserved_out))?;
        write_conserved_csv(record, &mut cons_file).map_err(|e| e.to_string())?;
        Ok(())
    };
    match simulate(&prepared.spec, &prepared.initial) {
        Ok(record) => {
            let drift = conserved_drift(&record);
            let max_residual = record
                .residual_norms
                .iter()
                .copied()
                .fold(0.0f64, f64::max);
            if let Err(e) = write_outputs(&record) {
                return fail(e);
            }
            RunOutcome {
                config_path: config_path.clone(),
                report: json!({
                    "config": config_path,
                    "ok": true,
                    "equation": config.equation.to_string(),
                    "t_end": record.last_time(),
                    "snapshots": record.times.len(),
                    "conserved_drift": drift,
                    "max_centered_residual": max_residual,
                    "out": config.out,
                    "conserved_out": config.conserved_out,
                    "seed": env_seed(config.seed),
                    "wall_clock_seconds": started.elapsed().as_secs_f64(),
                }),
                failed: false,
            }
        }
        Err(SolverError::BlowUp {
            t_last_valid,
            record,
        }) => {
            let _ = write_outputs(&record);
            RunOutcome {
                config_path: config_path.clone(),
                report: json!({
                    "config": config_path,
                    "ok": false,
                    "error": "solution blew up",
                    "last_valid_time": t_last_valid,
                    "wall_clock_seconds": started.elapsed().as_secs_f64(),
                }),
                failed: true,
            }
        }
        Err(e) => fail(e.to_string()),
    }
}

fn conserved_drift(record: &cdkdv::RunRecord) -> Value {
    let drift = |get: fn(&cdkdv::ConservedReport) -> f64| -> f64 {
        let first = record.conserved.first().map(get).unwrap_or(0.0);
        record
            .conserved
            .iter()
            .map(|c| (get(c) - first).abs())
            .fold(0.0f64, f64::max)
            / first.abs().max(1.0)
    };
    json!({
        "h1": drift(|c| c.h1),
        "h2": drift(|c| c.h2),
        "h3": drift(|c| c.h3),
    })
}

fn run_simulate(args: SimulateArgs, started: Instant) -> Result<i32, String> {
    let jobs = args.jobs.max(1);
    let mut outcomes: Vec<RunOutcome> = Vec::new();
    for chunk in args.config.chunks(jobs) {
        let mut batch: Vec<RunOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|path| scope.spawn(move || simulate_one(path, started)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        outcomes.append(&mut batch);
    }
    let any_failed = outcomes.iter().any(|o| o.failed);
    if outcomes.len() == 1 {
        emit(&outcomes[0].report);
    } else {
        emit(&Value::Array(
            outcomes.iter().map(|o| o.report.clone()).collect(),
        ));
    }
    for o in &outcomes {
        if o.failed {
            eprintln!("run failed: {}", o.config_path);
        }
    }
    Ok(if any_failed { 1 } else { 0 })
}

fn parse_grid_arg(text: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err("grid must be \"N,L\"".to_string());
    }
    let n: usize = parts[0].trim().parse().map_err(|e| format!("N: {e}"))?;
    let l: f64 = parts[1].trim().parse().map_err(|e| format!("L: {e}"))?;
    Grid::new(n, l).map_err(|e| e.to_string())
}

fn certification_samples(center: f64, halfwidth: f64) -> Vec<(f64, f64)> {
    let mut samples = Vec::with_capacity(200);
    for i in 0..20 {
        for j in 0..10 {
            let x = center - halfwidth + 2.0 * halfwidth * i as f64 / 19.0;
            let t = -1.0 + 2.0 * j as f64 / 9.0;
            samples.push((x, t));
        }
    }
    samples
}

fn run_soliton(args: SolitonArgs, started: Instant) -> Result<i32, String> {
    let algebra = Algebra::shared(args.level).map_err(|e| e.to_string())?;
    let dim = algebra.dim();
    let alpha = CdNumber::from_coeffs(
        parse_cd_coeffs(&args.alpha, Some(dim)).map_err(|e| e.to_string())?,
    );
    let v = match &args.v {
        Some(text) => Some(CdNumber::from_coeffs(
            parse_cd_coeffs(text, Some(dim)).map_err(|e| e.to_string())?,
        )),
        None => None,
    };
    let two = match (args.lambda2, &args.beta) {
        (Some(l2), Some(beta_text)) => {
            let beta = CdNumber::from_coeffs(
                parse_cd_coeffs(beta_text, Some(dim)).map_err(|e| e.to_string())?,
            );
            let mut spec =
                TwoSolitonSpec::new(algebra.clone(), args.lambda, alpha.clone(), l2, beta)
                    .map_err(|e| e.to_string())?;
            if let (Some(p1), Some(p2)) = (args.peak, args.peak2) {
                spec = spec.with_peaks_at(p1, p2);
            }
            Some(spec)
        }
        (None, None) => None,
        _ => return Err("--lambda2 and --beta must be given together".to_string()),
    };
    let one = if two.is_none() {
        let mut spec = SolitonSpec::new(algebra.clone(), args.lambda, alpha)
            .map_err(|e| e.to_string())?;
        if let Some(p) = args.peak {
            spec = spec.with_peak_at(p);
        }
        Some(spec)
    } else {
        None
    };

    if let Some(out) = &args.out {
        let grid = parse_grid_arg(
            args.grid
                .as_deref()
                .ok_or_else(|| "--out needs --grid N,L".to_string())?,
        )?;
        let t = args.time;
        let (field, boundary) = match (&one, &two) {
            (Some(s), None) => make_initial_field(|x| s.u(x, t), grid, algebra.clone()),
            (None, Some(s)) => make_initial_field(|x| s.u(x, t), grid, algebra.clone()),
            _ => unreachable!(),
        }
        .map_err(|e| e.to_string())?;
        if boundary > 1e-12 {
            eprintln!("warning: field only decays to {boundary:.3e} at the domain edge");
        }
        let record = cdkdv::RunRecord {
            times: vec![t],
            conserved: vec![conserved(&field)],
            residual_norms: vec![0.0],
            snapshots: vec![field],
        };
        let mut file = fs::File::create(out).map_err(|e| e.to_string())?;
        write_run_csv(&record, &mut file).map_err(|e| e.to_string())?;
    }

    if !args.certify {
        if args.out.is_none() {
            return Err("nothing to do: pass --out and/or --certify".to_string());
        }
        return Ok(0);
    }

    // analytic residual certification around the crest(s)
    let report;
    let pass;
    match (&one, &two) {
        (Some(spec), None) => {
            let center = args.peak.unwrap_or(0.0);
            let samples = certification_samples(center, 10.0);
            let ode24 = ode24_residual(spec, &samples).map_err(|e| e.to_string())?;
            let eq25 = kdv25_residual_one(spec, &samples, None).map_err(|e| e.to_string())?;
            let eq2 = match &v {
                Some(v) => {
                    Some(kdv25_residual_one(spec, &samples, Some(v)).map_err(|e| e.to_string())?)
                }
                None => None,
            };
            pass = ode24 < 1e-8 && eq25 < 1e-8 && eq2.map_or(true, |r| r < 1e-8);
            report = json!({
                "command": "soliton --certify",
                "kind": "one",
                "lambda": args.lambda,
                "residual_ode24": ode24,
                "residual_eq25": eq25,
                "residual_eq2": eq2,
                "thresholds": {"ode24": 1e-8, "eq25": 1e-8},
                "pass": pass,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            });
        }
        (None, Some(spec)) => {
            let c1 = args.peak.unwrap_or(0.0);
            let c2 = args.peak2.unwrap_or(0.0);
            let samples = certification_samples(0.5 * (c1 + c2), 12.0 + (c2 - c1).abs());
            let eq25 = kdv25_residual_two(spec, &samples, None).map_err(|e| e.to_string())?;
            let eq2 = match &v {
                Some(v) => {
                    Some(kdv25_residual_two(spec, &samples, Some(v)).map_err(|e| e.to_string())?)
                }
                None => None,
            };
            pass = eq25 < 1e-6 && eq2.map_or(true, |r| r < 1e-6);
            report = json!({
                "command": "soliton --certify",
                "kind": "two",
                "lambda": args.lambda,
                "lambda2": args.lambda2,
                "residual_eq25": eq25,
                "residual_eq2": eq2,
                "thresholds": {"eq25": 1e-6},
                "pass": pass,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            });
        }
        _ => unreachable!(),
    }
    emit(&report);
    Ok(if pass { 0 } else { 1 })
}

fn load_json(path: &PathBuf) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn field_f64(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("config needs numeric field `{key}`"))
}

fn field_coeffs(v: &Value, key: &str, dim: usize) -> Result<Option<CdNumber>, String> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => {
            if items.len() != dim {
                return Err(format!(
                    "field `{key}`: expected {dim} coefficients, got {}",
                    items.len()
                ));
            }
            let coeffs: Option<Vec<f64>> = items.iter().map(Value::as_f64).collect();
            coeffs
                .map(|c| Some(CdNumber::from_coeffs(c)))
                .ok_or_else(|| format!("field `{key}`: coefficients must be numbers"))
        }
        Some(_) => Err(format!("field `{key}` must be an array of numbers")),
    }
}

fn run_verify(cmd: VerifyCmd, started: Instant) -> Result<i32, String> {
    match cmd {
        VerifyCmd::Backlund { config } => {
            let cfg = load_json(&config)?;
            let level = field_f64(&cfg, "level").unwrap_or(3.0) as u32;
            let algebra = Algebra::shared(level).map_err(|e| e.to_string())?;
            let dim = algebra.dim();
            let lambda = field_f64(&cfg, "lambda")?;
            let alpha = field_coeffs(&cfg, "alpha", dim)?
                .ok_or_else(|| "config needs `alpha`".to_string())?;
            let v = field_coeffs(&cfg, "v", dim)?.unwrap_or_else(|| CdNumber::zero(dim));
            let t = field_f64(&cfg, "t").unwrap_or(0.0);
            let count = field_f64(&cfg, "samples").unwrap_or(200.0) as usize;
            let spec = SolitonSpec::new(algebra.clone(), lambda, alpha)
                .map_err(|e| e.to_string())?;
            let xs: Vec<f64> = (0..count)
                .map(|i| -12.0 + 24.0 * i as f64 / (count.max(2) - 1) as f64)
                .collect();
            let pair = backlund_pair_from_soliton(&spec, &xs, t).map_err(|e| e.to_string())?;
            let (res7, res8) = pair.residuals(&v).map_err(|e| e.to_string())?;
            let pass = res7 < 1e-10 && res8 < 1e-8;
            emit(&json!({
                "command": "verify backlund",
                "eta": spec.eta(),
                "residual_eq7": res7,
                "residual_eq8": res8,
                "min_real_gap": pair.min_real_gap(),
                "thresholds": {"eq7": 1e-10, "eq8": 1e-8},
                "pass": pass,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(if pass { 0 } else { 1 })
        }
        VerifyCmd::Gardner { config } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| format!("cannot read {}: {e}", config.display()))?;
            let cfg = parse_config(&text).map_err(|e| e.to_string())?;
            if cfg.equation != cdkdv::Equation::Gardner {
                return Err("verify gardner expects a config with equation = \"gardner\"".into());
            }
            let prepared = prepare_run(&cfg, |p| {
                fs::read_to_string(p).map_err(|e| e.to_string())
            })
            .map_err(|e| e.to_string())?;
            let record = simulate(&prepared.spec, &prepared.initial)
                .map_err(|e| e.to_string())?;
            let residual = gardner_consistency(&record, cfg.epsilon, &prepared.spec.v, cfg.dealias)
                .map_err(|e| e.to_string())?;
            let charge0 = gardner_real_charge(&record.snapshots[0]);
            let charge_drift = record
                .snapshots
                .iter()
                .map(|r| (gardner_real_charge(r) - charge0).abs())
                .fold(0.0f64, f64::max)
                / charge0.abs().max(1.0);
            // the epsilon reflection must agree bitwise on every snapshot
            let reflection_bitwise = record.snapshots.iter().all(|r| {
                let (u, up) = gardner_forward(r, cfg.epsilon);
                let (u2, up2) = gardner_forward(r, -cfg.epsilon);
                u == up2 && up == u2
            });
            let pass = residual < 1e-5 && charge_drift < 1e-6 && reflection_bitwise;
            emit(&json!({
                "command": "verify gardner",
                "epsilon": cfg.epsilon,
                "level": cfg.level,
                "mapped_cdkdv_residual": residual,
                "real_charge_drift": charge_drift,
                "reflection_bitwise": reflection_bitwise,
                "thresholds": {"residual": 1e-5, "charge_drift": 1e-6},
                "pass": pass,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(if pass { 0 } else { 1 })
        }
        VerifyCmd::Lax { config } => {
            let cfg = load_json(&config)?;
            let level = field_f64(&cfg, "level").unwrap_or(2.0) as u32;
            if level > 3 {
                return Err("the operator pair is only formulated through level 3".into());
            }
            let algebra = Algebra::shared(level).map_err(|e| e.to_string())?;
            let dim = algebra.dim();
            let lambda = field_f64(&cfg, "lambda")?;
            let alpha = field_coeffs(&cfg, "alpha", dim)?
                .ok_or_else(|| "config needs `alpha`".to_string())?;
            let v = field_coeffs(&cfg, "v", dim)?.unwrap_or_else(|| CdNumber::zero(dim));
            let n = field_f64(&cfg, "N").unwrap_or(256.0) as usize;
            let l = field_f64(&cfg, "L").unwrap_or(80.0);
            let dt = field_f64(&cfg, "dt").unwrap_or(1e-3);
            let t = field_f64(&cfg, "t").unwrap_or(0.25);
            let mode = field_f64(&cfg, "mode").unwrap_or(2.0);
            let grid = Grid::new(n, l).map_err(|e| e.to_string())?;
            let spec = SolitonSpec::new(algebra.clone(), lambda, alpha)
                .map_err(|e| e.to_string())?
                .with_peak_at(l / 2.0);
            let sample = |tt: f64| -> Result<Field, String> {
                make_initial_field(|x| spec.u(x, tt), grid, algebra.clone())
                    .map(|(f, _)| f)
                    .map_err(|e| e.to_string())
            };
            let psi = Field::from_fn(grid, algebra.clone(), |x| {
                CdNumber::real_scalar(dim, (2.0 * std::f64::consts::PI * mode * x / l).sin())
            });
            let residual_at = |dt: f64| -> Result<f64, String> {
                lax_residual(&sample(t - dt)?, &sample(t)?, &sample(t + dt)?, dt, &v, &psi)
                    .map_err(|e| e.to_string())
            };
            let residual = residual_at(dt)?;
            let residual_half = residual_at(dt / 2.0)?;
            let ratio = residual / residual_half.max(f64::MIN_POSITIVE);
            let asserted = level <= 2;
            let pass = !asserted || (residual < 1e-6 && ratio > 3.0 && ratio < 5.5);
            emit(&json!({
                "command": "verify lax",
                "level": level,
                "residual": residual,
                "residual_half_dt": residual_half,
                "ratio": ratio,
                "asserted": asserted,
                "pass": pass,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(if pass { 0 } else { 1 })
        }
    }
}

fn run_conserved(args: ConservedArgs, _started: Instant) -> Result<i32, String> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| format!("cannot read {}: {e}", args.input.display()))?;
    let table = read_run_csv(&text).map_err(|e| e.to_string())?;
    let mut rows = String::from("t,H1,H2,H3\n");
    for (t, snap) in table.times.iter().zip(&table.snapshots) {
        let c = conserved(snap);
        rows.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(*t),
            fmt_f64(c.h1),
            fmt_f64(c.h2),
            fmt_f64(c.h3)
        ));
    }
    match &args.out {
        Some(path) => {
            fs::write(path, rows).map_err(|e| e.to_string())?;
            let first = conserved(&table.snapshots[0]);
            let drift = table
                .snapshots
                .iter()
                .map(|s| {
                    let c = conserved(s);
                    (c.h1 - first.h1)
                        .abs()
                        .max((c.h2 - first.h2).abs())
                        .max((c.h3 - first.h3).abs())
                })
                .fold(0.0f64, f64::max);
            emit(&json!({
                "command": "conserved",
                "input": args.input.display().to_string(),
                "out": path.display().to_string(),
                "snapshots": table.times.len(),
                "max_absolute_drift": drift,
            }));
        }
        None => print!("{rows}"),
    }
    Ok(0)
}

fn run_symmetry(cmd: SymmetryCmd, started: Instant) -> Result<i32, String> {
    let algebra = Algebra::shared(3).expect("octonions exist");
    match cmd {
        SymmetryCmd::Basis { out } => {
            let basis = g2_basis(&algebra).map_err(|e| e.to_string())?;
            let mut csv = String::from("derivation,pair_i,pair_j,row,m_0,m_1,m_2,m_3,m_4,m_5,m_6,m_7\n");
            for (k, d) in basis.derivations.iter().enumerate() {
                let (i, j) = basis.pairs[k];
                for r in 0..8 {
                    let entries: Vec<String> =
                        (0..8).map(|c| fmt_f64(d.matrix[(r, c)])).collect();
                    csv.push_str(&format!("{k},{i},{j},{r},{}\n", entries.join(",")));
                }
            }
            match out {
                Some(path) => fs::write(path, csv).map_err(|e| e.to_string())?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
        SymmetryCmd::Stabilizer { v } => {
            let v = CdNumber::from_coeffs(
                parse_cd_coeffs(&v, Some(8)).map_err(|e| e.to_string())?,
            );
            let basis = g2_basis(&algebra).map_err(|e| e.to_string())?;
            let (dimension, null_basis) = basis.stabilizer(&v).map_err(|e| e.to_string())?;
            emit(&json!({
                "command": "symmetry stabilizer",
                "v": v.coeffs(),
                "dimension": dimension,
                "null_space_basis": null_basis,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(0)
        }
        SymmetryCmd::Invariance { run, v, mu, pair } => {
            let v = CdNumber::from_coeffs(
                parse_cd_coeffs(&v, Some(8)).map_err(|e| e.to_string())?,
            );
            let pair_ix = parse_cd_coeffs(&pair, Some(2)).map_err(|e| e.to_string())?;
            let (pi, pj) = (pair_ix[0] as usize, pair_ix[1] as usize);
            if pi == 0 || pj == 0 || pi > 7 || pj > 7 {
                return Err("--pair needs two imaginary indices in 1..=7".to_string());
            }
            let text = fs::read_to_string(&run)
                .map_err(|e| format!("cannot read {}: {e}", run.display()))?;
            let table = read_run_csv(&text).map_err(|e| e.to_string())?;
            if table.algebra.level() != 3 {
                return Err("invariance analysis expects an octonion trajectory".to_string());
            }
            if table.snapshots.len() < 3 {
                return Err("need at least 3 snapshots for the time derivative".to_string());
            }
            let jets = trajectory_jets(&table)?;
            let d = derivation(
                &algebra,
                &CdNumber::basis(8, pi),
                &CdNumber::basis(8, pj),
            )
            .map_err(|e| e.to_string())?;
            let dv_norm = cdkdv::symmetry::apply_matrix(&d.matrix, &v).norm();
            let r_base = evolution_residual(&algebra, &jets, Some(&v));
            let r1 = invariance_residual(&algebra, &jets, &v, &d.matrix, mu);
            let r2 = invariance_residual(&algebra, &jets, &v, &d.matrix, mu / 10.0);
            let slope = (r1.max(1e-300) / r2.max(1e-300)).ln() / 10f64.ln();
            emit(&json!({
                "command": "symmetry invariance",
                "pair": [pi, pj],
                "mu": mu,
                "d_of_v_norm": dv_norm,
                "base_residual": r_base,
                "residual_at_mu": r1,
                "residual_at_mu_over_10": r2,
                "slope": slope,
                "wall_clock_seconds": started.elapsed().as_secs_f64(),
            }));
            Ok(0)
        }
    }
}

/// Derivative bundles for the middle snapshot of a stored trajectory:
/// spatial derivatives spectrally, time derivative by centered difference.
fn trajectory_jets(table: &cdkdv::io::RunTable) -> Result<Vec<SolutionJet>, String> {
    let mid = table.snapshots.len() / 2;
    let (prev, cur, next) = (
        &table.snapshots[mid - 1],
        &table.snapshots[mid],
        &table.snapshots[mid + 1],
    );
    let dt = table.times[mid + 1] - table.times[mid];
    let dt_prev = table.times[mid] - table.times[mid - 1];
    if ((dt - dt_prev).abs() > 1e-9 * dt.abs()) || !(dt > 0.0) {
        return Err("snapshots are not uniformly spaced in time".to_string());
    }
    let ux = spatial_derivative(cur, 1).map_err(|e| e.to_string())?;
    let uxx = spatial_derivative(cur, 2).map_err(|e| e.to_string())?;
    let uxxx = spatial_derivative(cur, 3).map_err(|e| e.to_string())?;
    let ut = next.sub(prev).scaled(1.0 / (2.0 * dt));
    Ok((0..table.grid.points())
        .map(|ix| SolutionJet {
            u: cur.sample(ix),
            u_x: ux.sample(ix),
            u_xx: uxx.sample(ix),
            u_xxx: uxxx.sample(ix),
            u_t: ut.sample(ix),
        })
        .collect())
}
