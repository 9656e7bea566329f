//! Semi-implicit finite-element solver for coupled moisture, solute and heat
//! transport in porous media.
//!
//! Each time step solves a nonlinear elliptic problem for the Kirchhoff
//! potential `u` by damped Newton, then two linear convection–diffusion
//! problems for the solute concentration `w` and the temperature `θ`, with
//! coefficients lagged one level. Space is discretized with P1 triangles and a
//! lumped mass matrix.
//!
//! ```no_run
//! use porous_core::{config::parse_config, run, NullSink, RunOptions};
//!
//! let cfg = parse_config("scenarios/default.cfg")?;
//! let scenario = cfg.scenario_spec()?.build()?;
//! let summary = run(&scenario, &mut NullSink, &RunOptions::default())?;
//! assert!(summary.audits_passed());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod simulation;
pub mod sparse;
pub mod stepper;
pub mod verify;

pub use assembly::{Assembler, AssemblyError, NodalField};
pub use config::{parse_config, CheckMode, Config, ConfigError, ScenarioSpec};
pub use constitutive::{validate_assumptions, CoefficientSet, Family, Probe, ValidationReport};
pub use diagnostics::{DiagnosticsRow, EnergyAudit};
pub use linalg::{LinalgError, SolveStats};
pub use mesh::{generate_rect_mesh, Marker, Mesh, MeshError, SideMarkers};
pub use output::DirectorySink;
pub use simulation::{run, AuditSettings, NullSink, RunError, RunOptions, RunSink, RunSummary};
pub use sparse::SparseMatrix;
pub use stepper::{BoundaryValues, Field, Forcing, Scenario, SolverSettings, State, StepError, StepReport, Stepper};
