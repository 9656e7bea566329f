//! Driving a scenario from level 0 to `p`, streaming rows and snapshots to a
//! sink and auditing the run when it completes.

use std::io;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::diagnostics::{DiagnosticsError, DiagnosticsRow, EnergyAudit, Monitor};
use crate::mesh::Mesh;
use crate::stepper::{Field, FieldBounds, Scenario, State, StepError, Stepper};

/// Receives the output of a run. Every method is called from the run loop only.
pub trait RunSink {
    fn start(&mut self, _mesh: &Mesh) -> io::Result<()> {
        Ok(())
    }
    fn row(&mut self, row: &DiagnosticsRow) -> io::Result<()>;
    fn snapshot(&mut self, step: usize, state: &State, mesh: &Mesh) -> io::Result<()>;
    /// Called once, also when the run aborts.
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl RunSink for NullSink {
    fn row(&mut self, _row: &DiagnosticsRow) -> io::Result<()> {
        Ok(())
    }

    fn snapshot(&mut self, _step: usize, _state: &State, _mesh: &Mesh) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSettings {
    pub overshoot_tol_u: f64,
    /// Shared by `w` and `θ`.
    pub overshoot_tol_transport: f64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            overshoot_tol_u: 1e-10,
            overshoot_tol_transport: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Snapshot cadence; level 0 and the final level are always included.
    pub snapshot_every: Option<usize>,
    pub keep_trajectory: bool,
    pub audit: AuditSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: State,
    pub steps: usize,
    pub rows: Vec<DiagnosticsRow>,
    pub bounds: FieldBounds,
    pub max_overshoot: [f64; 3],
    /// Only for autonomous runs (zero sources, constant boundary data).
    pub energy: Option<EnergyAudit>,
    pub audits: Vec<AuditOutcome>,
    /// Levels `0..=p` when requested.
    pub trajectory: Option<Vec<State>>,
    pub node_area: Vec<f64>,
    pub wall_time: Duration,
}

impl RunSummary {
    pub fn audits_passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    pub fn failed_audits(&self) -> impl Iterator<Item = &AuditOutcome> {
        self.audits.iter().filter(|a| !a.passed)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

fn snapshot_due(step: usize, last: usize, every: Option<usize>) -> bool {
    match every {
        None => false,
        Some(n) => step == 0 || step == last || (n > 0 && step.is_multiple_of(n)),
    }
}

/// Runs all `p = T/τ` steps. On failure the sink is still finished so that
/// partial output reaches disk.
pub fn run(scenario: &Scenario, sink: &mut dyn RunSink, options: &RunOptions) -> Result<RunSummary, RunError> {
    let result = run_inner(scenario, sink, options);
    let finished = sink.finish();
    let summary = result?;
    finished?;
    Ok(summary)
}

fn run_inner(scenario: &Scenario, sink: &mut dyn RunSink, options: &RunOptions) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    if scenario.mesh.dirichlet_nodes().is_empty() {
        log::warn!("no Dirichlet boundary: running in the all-Neumann test mode");
    }
    let stepper = Stepper::new(scenario);
    let asm = stepper.assembler();
    let mut monitor = Monitor::new(scenario, asm);
    let steps = scenario.steps();
    let mesh = &scenario.mesh;
    sink.start(mesh)?;

    let mut state = scenario.initial_state();
    let mut rows = Vec::with_capacity(steps + 1);
    let mut trajectory = options.keep_trajectory.then(|| vec![state.clone()]);
    let row = monitor.observe(asm, 0, &state, None)?;
    sink.row(&row)?;
    rows.push(row);
    if snapshot_due(0, steps, options.snapshot_every) {
        sink.snapshot(0, &state, mesh)?;
    }

    for step in 1..=steps {
        let (next, report) = stepper.advance(&state, step)?;
        let row = monitor.observe(asm, step, &next, Some(&report))?;
        log::debug!(
            "step {step}: t = {:.6}, newton {} its, overshoot {:?}",
            next.t,
            report.newton.iterations,
            row.overshoot
        );
        sink.row(&row)?;
        rows.push(row);
        state = next;
        if snapshot_due(step, steps, options.snapshot_every) {
            sink.snapshot(step, &state, mesh)?;
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(state.clone());
        }
    }

    let mut max_overshoot = [0.0f64; 3];
    for r in &rows {
        for f in 0..3 {
            max_overshoot[f] = max_overshoot[f].max(r.overshoot[f]);
        }
    }
    let mut audits = Vec::new();
    let energy = scenario.is_autonomous().then(|| monitor.energy_audit());
    if scenario.is_autonomous() {
        for f in Field::ALL {
            let tol = if f == Field::U {
                options.audit.overshoot_tol_u
            } else {
                options.audit.overshoot_tol_transport
            };
            let v = max_overshoot[f.index()];
            audits.push(AuditOutcome {
                name: ["bounds-u", "bounds-w", "bounds-theta"][f.index()],
                passed: v <= tol,
                detail: format!("max overshoot {v:.3e} (tolerance {tol:.1e})"),
            });
        }
        let e = energy.as_ref().expect("autonomous run has an energy audit");
        audits.push(AuditOutcome {
            name: "energy",
            passed: e.passed,
            detail: format!("min slack {:.3e} (threshold {:.3e})", e.min_slack, e.threshold),
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].dissipation_cum >= w[0].dissipation_cum);
    audits.push(AuditOutcome {
        name: "dissipation-monotone",
        passed: monotone,
        detail: format!("final {:.6e}", rows.last().map_or(0.0, |r| r.dissipation_cum)),
    });

    Ok(RunSummary {
        final_state: state,
        steps,
        rows,
        bounds: *monitor.bounds(),
        max_overshoot,
        energy,
        audits,
        trajectory,
        node_area: monitor.node_area().to_vec(),
        wall_time: started.elapsed(),
    })
}
