//! `porous` — run, verify and validate coupled moisture/solute/heat scenarios.
//!
//! Exit codes: 0 success, 1 solver or I/O failure, 2 a check or audit
//! failed, 64 usage or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use porous_core::config::{parse_config, CheckMode, Config};
use porous_core::constitutive::{validate_assumptions, Probe};
use porous_core::simulation::{run, RunError, RunOptions};
use porous_core::verify::{self, Axis, MmsPlan};
use porous_core::DirectorySink;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Ok = 0,
    Failure = 1,
    Check = 2,
    Usage = 64,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// A failed command: what to print and how to exit.
struct Fail(Exit, String);

impl Fail {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Fail(Exit::Usage, msg.to_string())
    }
    fn solver(msg: impl std::fmt::Display) -> Self {
        Fail(Exit::Failure, msg.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "porous", version, about = "Coupled moisture, solute and heat transport in porous media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario, writing diagnostics.csv, VTK snapshots and a mesh echo.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Snapshot every N steps (0: first and last level only). Overrides the config.
        #[arg(long, value_name = "N")]
        snapshot_every: Option<usize>,
        /// How audit failures affect the exit code. Overrides the config (default strict).
        #[arg(long, value_name = "MODE")]
        check_invariants: Option<CheckMode>,
    },
    /// Manufactured-solution convergence study.
    Mms {
        config: PathBuf,
        /// Also write rates_h.csv and rates_tau.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare one step against the brute-force dense oracle (tiny meshes only).
    Oracle { config: PathBuf },
    /// Check the coefficient laws (and initial data, if present) against the
    /// structural assumptions.
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = -50.0, allow_hyphen_values = true)]
        probe_lo: f64,
        #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
        probe_hi: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

fn load(path: &Path) -> Result<Config, Fail> {
    parse_config(path).map_err(|e| Fail::usage(format!("{}: {e}", path.display())))
}

fn cmd_run(
    path: &Path,
    out: &Path,
    snapshot_every: Option<usize>,
    check: Option<CheckMode>,
) -> Result<Exit, Fail> {
    let cfg = load(path)?;
    let spec = cfg.scenario_spec().map_err(Fail::usage)?;
    let scenario = spec.build().map_err(Fail::usage)?;
    let check = check.unwrap_or(spec.output.check);
    let options = RunOptions {
        snapshot_every: Some(snapshot_every.or(spec.output.snapshot_every).unwrap_or(0)),
        keep_trajectory: false,
        audit: spec.output.audit,
    };
    let mut sink = DirectorySink::create(out).map_err(Fail::solver)?;
    log::info!(
        "running {} nodes, {} steps, output to {}",
        scenario.mesh.node_count(),
        scenario.steps(),
        out.display()
    );
    let summary = match run(&scenario, &mut sink, &options) {
        Ok(s) => s,
        Err(RunError::Step(e)) => return Err(Fail::solver(format!("solver failure: {e}"))),
        Err(e) => return Err(Fail::solver(e)),
    };
    out!(
        "completed {} steps in {:.2?}; max overshoot u {:.3e}, w {:.3e}, theta {:.3e}",
        summary.steps, summary.wall_time, summary.max_overshoot[0], summary.max_overshoot[1], summary.max_overshoot[2]
    );
    if check == CheckMode::Off {
        return Ok(Exit::Ok);
    }
    for a in &summary.audits {
        out!("audit {:<22} {}  {}", a.name, if a.passed { "ok" } else { "FAILED" }, a.detail);
    }
    if summary.audits_passed() || check == CheckMode::Report {
        Ok(Exit::Ok)
    } else {
        let names: Vec<&str> = summary.failed_audits().map(|a| a.name).collect();
        eprintln!("invariant audit failed: {}", names.join(", "));
        Ok(Exit::Check)
    }
}

fn cmd_mms(path: &Path, out: Option<&Path>) -> Result<Exit, Fail> {
    let cfg = load(path)?;
    let cs = cfg.coefficients().map_err(Fail::usage)?;
    let spec = cfg.mms_spec().map_err(Fail::usage)?;
    let solver = cfg.solver_settings().map_err(Fail::usage)?;
    let case = verify::build_mms_case(&spec.case, cs, 1.0, 1.0).map_err(Fail::usage)?;
    let residual = case.source_residual(1000, 1.0, 1.0, spec.t_end, 1e-4, 1);
    out!(
        "source residual vs finite differences: u {:.2e}, w {:.2e}, theta {:.2e}",
        residual[0], residual[1], residual[2]
    );
    let plan = MmsPlan::new(
        spec.t_end,
        &spec.spatial_n,
        spec.spatial_c,
        spec.temporal_n,
        &spec.temporal_steps,
    );
    let report = verify::mms_study(&Arc::new(case), &plan, &solver).map_err(|e| match e {
        verify::StudyError::Plan(_) => Fail::usage(e),
        _ => Fail::solver(e),
    })?;
    let h_csv = report.spatial.to_csv(Axis::H);
    let tau_csv = report.temporal.to_csv(Axis::Tau);
    out!("{h_csv}{tau_csv}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Fail::solver(format!("{}: {e}", dir.display())))?;
        for (name, text) in [("rates_h.csv", &h_csv), ("rates_tau.csv", &tau_csv)] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Fail::solver(format!("{}: {e}", p.display())))?;
        }
    }
    let residual_ok = residual.iter().all(|&r| r <= 1e-6);
    if report.passed() && residual_ok {
        Ok(Exit::Ok)
    } else {
        eprintln!(
            "convergence check failed: spatial order {:?} (min {}), temporal order {:?} (min {}), residual ok: {residual_ok}",
            report.spatial_order(),
            verify::SPATIAL_ORDER_MIN,
            report.temporal_order(),
            verify::TEMPORAL_ORDER_MIN
        );
        Ok(Exit::Check)
    }
}

fn cmd_oracle(path: &Path) -> Result<Exit, Fail> {
    let cfg = load(path)?;
    let scenario = cfg.scenario_spec().and_then(|s| s.build()).map_err(Fail::usage)?;
    let tol = cfg.mms_spec().map_err(Fail::usage)?.oracle_tol;
    let dev = verify::oracle_step_check(&scenario).map_err(|e| match e {
        verify::OracleError::TooLarge(_) => Fail::usage(e),
        _ => Fail::solver(e),
    })?;
    out!("max nodal deviation {dev:.3e} (tolerance {tol:.1e})");
    Ok(if dev <= tol { Exit::Ok } else { Exit::Check })
}

fn cmd_validate(path: &Path, probe: Probe) -> Result<Exit, Fail> {
    if probe.lo.partial_cmp(&probe.hi) != Some(std::cmp::Ordering::Less) || probe.samples < 2 {
        return Err(Fail::usage("probe needs lo < hi and at least 2 samples"));
    }
    let cfg = load(path)?;
    let cs = cfg.coefficients().map_err(Fail::usage)?;
    let mut report = validate_assumptions(&cs, probe);
    if cfg.has_section("initial") {
        let scenario = cfg.scenario_spec().and_then(|s| s.build()).map_err(Fail::usage)?;
        let [u, w, th] = &scenario.initial;
        report.check_initial_data(&[("u", u), ("w", w), ("theta", th)]);
    }
    out!("{report}");
    if report.passed() {
        Ok(Exit::Ok)
    } else {
        let names: Vec<&str> = report.failed_clauses().map(|c| c.name).collect();
        eprintln!("assumptions violated: {}", names.join(", "));
        Ok(Exit::Check)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POROUS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage } else { Exit::Ok }.into();
        }
    };
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            snapshot_every,
            check_invariants,
        } => cmd_run(config, out, *snapshot_every, *check_invariants),
        Command::Mms { config, out } => cmd_mms(config, out.as_deref()),
        Command::Oracle { config } => cmd_oracle(config),
        Command::Validate {
            config,
            probe_lo,
            probe_hi,
            samples,
        } => cmd_validate(config, Probe::new(*probe_lo, *probe_hi, *samples)),
    };
    match result {
        Ok(code) => code.into(),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            code.into()
        }
    }
}
