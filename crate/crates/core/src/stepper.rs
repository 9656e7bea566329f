//! The semi-implicit time step: a monotone nonlinear solve for the potential
//! `u`, followed by two linear transport solves for `w` and `θ` that share the
//! fresh `u` through the convection matrix and are otherwise independent.

use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{apply_dirichlet, Assembler, AssemblyError};
use crate::constitutive::CoefficientSet;
use crate::linalg::{bicgstab_solve, cg_solve, KrylovSettings, LinalgError, SolveStats};
use crate::mesh::Mesh;
use crate::sparse::{norm2, SparseMatrix};

/// Field selector used in reports and errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    U,
    W,
    Theta,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::U, Field::W, Field::Theta];

    pub fn name(self) -> &'static str {
        match self {
            Field::U => "u",
            Field::W => "w",
            Field::Theta => "theta",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
}

impl State {
    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::U => &self.u,
            Field::W => &self.w,
            Field::Theta => &self.theta,
        }
    }
}

/// Source terms and (optionally) space–time Dirichlet data. Without a forcing
/// the sources vanish and the constant boundary levels apply.
pub trait Forcing: Send + Sync {
    /// `[f_u, f_w, f_θ]` at a point.
    fn source(&self, x: f64, y: f64, t: f64) -> [f64; 3];

    /// Overrides the constant boundary levels when `Some`.
    fn dirichlet(&self, _x: f64, _y: f64, _t: f64) -> Option<[f64; 3]> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryValues {
    pub u: f64,
    pub w: f64,
    pub theta: f64,
}

impl BoundaryValues {
    pub fn get(&self, f: Field) -> f64 {
        [self.u, self.w, self.theta][f.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Newton stops once `‖R‖ ≤ newton_tol·(‖F‖ + ‖R₀‖)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Smallest damping factor tried by the backtracking line search.
    pub line_search_floor: f64,
    pub krylov: KrylovSettings,
    pub upwind: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            newton_tol: 1e-9,
            newton_max_iter: 50,
            line_search_floor: 2f64.powi(-20),
            krylov: KrylovSettings::default(),
            upwind: false,
        }
    }
}

/// Admissible interval per field, from initial and boundary data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl FieldBounds {
    pub fn overshoot(&self, f: Field, values: &[f64]) -> f64 {
        let i = f.index();
        let (mn, mx) = min_max(values);
        0.0f64.max(self.lo[i] - mn).max(mx - self.hi[i])
    }
}

pub fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("tau must be positive, got {0}")]
    Tau(f64),
    #[error("t_end must be nonnegative, got {0}")]
    TEnd(f64),
    #[error("t_end = {t_end} is not an integer multiple of tau = {tau}")]
    NotMultiple { t_end: f64, tau: f64 },
    #[error("initial field {field} has length {got}, mesh has {expected} nodes")]
    InitialLength { field: Field, got: usize, expected: usize },
    #[error("initial field {field} is not finite at node {node}")]
    InitialNonFinite { field: Field, node: usize },
}

/// Everything a run needs. Initial fields are nodal samples.
#[derive(Clone)]
pub struct Scenario {
    pub mesh: Arc<Mesh>,
    pub coefficients: CoefficientSet,
    pub tau: f64,
    pub t_end: f64,
    pub boundary: BoundaryValues,
    pub initial: [Vec<f64>; 3],
    pub forcing: Option<Arc<dyn Forcing>>,
    pub solver: SolverSettings,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("nodes", &self.mesh.node_count())
            .field("coefficients", &self.coefficients)
            .field("tau", &self.tau)
            .field("t_end", &self.t_end)
            .field("boundary", &self.boundary)
            .field("forced", &self.forcing.is_some())
            .field("solver", &self.solver)
            .finish()
    }
}

impl Scenario {
    pub fn new(
        mesh: Arc<Mesh>,
        coefficients: CoefficientSet,
        tau: f64,
        t_end: f64,
        boundary: BoundaryValues,
        initial: [Vec<f64>; 3],
    ) -> Result<Self, ScenarioError> {
        let sc = Scenario {
            mesh,
            coefficients,
            tau,
            t_end,
            boundary,
            initial,
            forcing: None,
            solver: SolverSettings::default(),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn with_forcing(mut self, forcing: Arc<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ScenarioError::Tau(self.tau));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(ScenarioError::TEnd(self.t_end));
        }
        let ratio = self.t_end / self.tau;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ScenarioError::NotMultiple {
                t_end: self.t_end,
                tau: self.tau,
            });
        }
        let n = self.mesh.node_count();
        for f in Field::ALL {
            let v = &self.initial[f.index()];
            if v.len() != n {
                return Err(ScenarioError::InitialLength {
                    field: f,
                    got: v.len(),
                    expected: n,
                });
            }
            if let Some(node) = v.iter().position(|x| !x.is_finite()) {
                return Err(ScenarioError::InitialNonFinite { field: f, node });
            }
        }
        Ok(())
    }

    /// Number of steps `p = T/τ`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }

    /// Time of level `n`, computed without accumulation drift.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps() {
            self.t_end
        } else {
            n as f64 * self.tau
        }
    }

    /// Nodal Dirichlet values per field at time `t` (entries at free nodes are unused).
    pub fn dirichlet_values(&self, t: f64) -> [Vec<f64>; 3] {
        let n = self.mesh.node_count();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for &i in self.mesh.dirichlet_nodes() {
            let [x, y] = self.mesh.nodes()[i];
            let v = self
                .forcing
                .as_ref()
                .and_then(|f| f.dirichlet(x, y, t))
                .unwrap_or([self.boundary.u, self.boundary.w, self.boundary.theta]);
            for f in 0..3 {
                out[f][i] = v[f];
            }
        }
        out
    }

    /// Level-0 state: initial samples with the boundary data imposed.
    pub fn initial_state(&self) -> State {
        let g = self.dirichlet_values(0.0);
        let mut fields = self.initial.clone();
        for &i in self.mesh.dirichlet_nodes() {
            for f in 0..3 {
                fields[f][i] = g[f][i];
            }
        }
        let [u, w, theta] = fields;
        State { t: 0.0, u, w, theta }
    }

    /// `m = min(min data₀, g)`, `M = max(max data₀, g)`; boundary levels enter
    /// only when Dirichlet nodes exist.
    pub fn bounds(&self) -> FieldBounds {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let has_dirichlet = !self.mesh.dirichlet_nodes().is_empty();
        for f in Field::ALL {
            let (mut mn, mut mx) = min_max(&self.initial[f.index()]);
            if has_dirichlet {
                let g = self.boundary.get(f);
                mn = mn.min(g);
                mx = mx.max(g);
            }
            lo[f.index()] = mn;
            hi[f.index()] = mx;
        }
        FieldBounds { lo, hi }
    }

    /// Zero sources and constant boundary data: the setting of the energy estimate.
    pub fn is_autonomous(&self) -> bool {
        self.forcing.is_none()
    }
}

#[derive(Debug, Error)]
pub enum StepFailure {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("{field} solve: {source}")]
    Linear {
        field: Field,
        #[source]
        source: LinalgError,
    },
    #[error("{field} solve did not converge in {} iterations (relative residual {:.3e})", stats.iterations, stats.final_residual)]
    LinearNotConverged { field: Field, stats: SolveStats },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("Newton line search stalled at iteration {iteration} (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    LineSearch {
        iteration: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("non-finite values in {0}")]
    NonFinite(Field),
}

#[derive(Debug, Error)]
#[error("step {step} (t = {t}): {failure}")]
pub struct StepError {
    pub step: usize,
    pub t: f64,
    #[source]
    pub failure: StepFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
    /// Residual norm after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton: NewtonReport,
    pub w_solve: SolveStats,
    pub theta_solve: SolveStats,
    /// `τ·UᵀK(a(Θ_prev))U` for the accepted `U`.
    pub dissipation: f64,
}

/// Per-mesh machinery for advancing a scenario one step at a time.
pub struct Stepper<'s> {
    scenario: &'s Scenario,
    asm: Assembler<'s>,
}

struct UOutcome {
    u: Vec<f64>,
    report: NewtonReport,
    dissipation: f64,
}

impl<'s> Stepper<'s> {
    pub fn new(scenario: &'s Scenario) -> Self {
        Stepper {
            scenario,
            asm: Assembler::new(&scenario.mesh),
        }
    }

    pub fn scenario(&self) -> &'s Scenario {
        self.scenario
    }

    pub fn assembler(&self) -> &Assembler<'s> {
        &self.asm
    }

    fn sources(&self, t: f64) -> Option<[Vec<f64>; 3]> {
        let forcing = self.scenario.forcing.as_ref()?;
        let n = self.scenario.mesh.node_count();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, &[x, y]) in self.scenario.mesh.nodes().iter().enumerate() {
            let f = forcing.source(x, y, t);
            for k in 0..3 {
                out[k][i] = self.asm.node_area()[i] * f[k];
            }
        }
        Some(out)
    }

    fn map(&self, values: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        values.iter().map(|&v| f(v)).collect()
    }

    /// Newton Jacobian `(1/τ)M·diag(b′(U)) + K(a(Θ_prev))` with Dirichlet rows eliminated.
    pub fn jacobian(&self, u: &[f64], theta_prev: &[f64]) -> Result<SparseMatrix, AssemblyError> {
        let cs = &self.scenario.coefficients;
        let k = self.asm.stiffness(&self.map(theta_prev, |t| cs.a(t)))?;
        Ok(self.jacobian_from(&k, u))
    }

    fn jacobian_from(&self, k: &SparseMatrix, u: &[f64]) -> SparseMatrix {
        let cs = &self.scenario.coefficients;
        let tau = self.scenario.tau;
        let mut j = k.clone();
        let d: Vec<f64> = u
            .iter()
            .zip(self.asm.node_area())
            .map(|(&z, m)| m * cs.b_prime(z) / tau)
            .collect();
        j.add_diagonal(&d);
        let n = u.len();
        let mut dummy = vec![0.0; n];
        let mesh = &self.scenario.mesh;
        apply_dirichlet(&mut j, &mut dummy, mesh, mesh.dirichlet_nodes(), &vec![0.0; n])
            .expect("mesh Dirichlet nodes are Dirichlet");
        j
    }

    /// Nonlinear residual of the `u` equation on free nodes (zero on Dirichlet nodes).
    fn u_residual(&self, u: &[f64], k: &SparseMatrix, b_prev: &[f64], f_u: Option<&[f64]>) -> Vec<f64> {
        let cs = &self.scenario.coefficients;
        let tau = self.scenario.tau;
        let mut r = k.mul_vec(u);
        let m = self.asm.node_area();
        for i in 0..u.len() {
            if self.scenario.mesh.is_dirichlet(i) {
                r[i] = 0.0;
                continue;
            }
            r[i] += m[i] * (cs.b(u[i]) - b_prev[i]) / tau;
            if let Some(f) = f_u {
                r[i] -= f[i];
            }
        }
        r
    }

    fn u_step(&self, prev: &State, t_new: f64, f_u: Option<&[f64]>, g_u: &[f64]) -> Result<UOutcome, StepFailure> {
        let sc = self.scenario;
        let cs = &sc.coefficients;
        let mesh = &sc.mesh;
        let settings = &sc.solver;
        let a_prev = self.map(&prev.theta, |t| cs.a(t));
        let k = self.asm.stiffness(&a_prev)?;
        let b_prev = self.map(&prev.u, |z| cs.b(z));

        let mut u = prev.u.clone();
        for &i in mesh.dirichlet_nodes() {
            u[i] = g_u[i];
        }
        let mut r = self.u_residual(&u, &k, &b_prev, f_u);
        let r0 = norm2(&r);
        let f_norm = f_u.map_or(0.0, |f| {
            norm2(&f.iter().enumerate().map(|(i, v)| if mesh.is_dirichlet(i) { 0.0 } else { *v }).collect::<Vec<_>>())
        });
        // Rounding floor of the residual evaluation, for starts already at a fixed point.
        let m = self.asm.node_area();
        let mb: Vec<f64> = (0..u.len()).map(|i| m[i] * cs.b(u[i]) / sc.tau).collect();
        let noise = 64.0 * f64::EPSILON * (norm2(&mb) + k.norm_inf() * norm2(&u) + f_norm);
        let tolerance = (settings.newton_tol * (f_norm + r0)).max(noise);

        let mut res = r0;
        let mut history = vec![res];
        let mut linear_iterations = 0;
        let mut iterations = 0;
        while res > tolerance {
            if iterations >= settings.newton_max_iter {
                log::error!(
                    "Newton failure at t = {t_new}: residual history {history:?}, u range {:?}",
                    min_max(&u)
                );
                return Err(StepFailure::NewtonDiverged {
                    iterations,
                    residual: res,
                    tolerance,
                });
            }
            let j = self.jacobian_from(&k, &u);
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let (delta, stats) = cg_solve(
                &j,
                &rhs,
                &vec![0.0; u.len()],
                settings.krylov.rel_tol,
                settings.krylov.max_iter_for(u.len()),
            )
            .map_err(|source| StepFailure::Linear { field: Field::U, source })?;
            linear_iterations += stats.iterations;
            if !stats.accepted() {
                log::warn!(
                    "inexact Newton direction at t = {t_new}: relative residual {:.3e}",
                    stats.final_residual
                );
            }
            iterations += 1;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x + lambda * d).collect();
                let r_trial = self.u_residual(&trial, &k, &b_prev, f_u);
                let n_trial = norm2(&r_trial);
                if n_trial < res {
                    u = trial;
                    r = r_trial;
                    res = n_trial;
                    break;
                }
                lambda *= 0.5;
                if lambda < settings.line_search_floor {
                    log::error!(
                        "line search stalled at t = {t_new}: residual history {history:?}, u range {:?}",
                        min_max(&u)
                    );
                    return Err(StepFailure::LineSearch {
                        iteration: iterations,
                        residual: res,
                        tolerance,
                    });
                }
            }
            history.push(res);
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(StepFailure::NonFinite(Field::U));
        }
        let dissipation = sc.tau * self.asm.weighted_gradient_norm_sq(Some(&a_prev), &u);
        Ok(UOutcome {
            u,
            report: NewtonReport {
                iterations,
                residual: res,
                tolerance,
                history,
                linear_iterations,
            },
            dissipation,
        })
    }

    /// Solves `[diag(m_new/τ) + K(κ) + C]·X = diag(m_old/τ)·X_prev + F` with Dirichlet data.
    #[allow(clippy::too_many_arguments)]
    fn transport_solve(
        &self,
        field: Field,
        conductivity: &[f64],
        convection: &SparseMatrix,
        capacity_new: &[f64],
        capacity_old: &[f64],
        prev: &[f64],
        source: Option<&[f64]>,
        g: &[f64],
    ) -> Result<(Vec<f64>, SolveStats), StepFailure> {
        let sc = self.scenario;
        let mesh = &sc.mesh;
        let tau = sc.tau;
        let m = self.asm.node_area();
        let mut a = self.asm.stiffness(conductivity)?;
        a.axpy(1.0, convection);
        let diag: Vec<f64> = (0..prev.len()).map(|i| m[i] * capacity_new[i] / tau).collect();
        a.add_diagonal(&diag);
        let mut rhs: Vec<f64> = (0..prev.len())
            .map(|i| m[i] * capacity_old[i] * prev[i] / tau + source.map_or(0.0, |f| f[i]))
            .collect();
        apply_dirichlet(&mut a, &mut rhs, mesh, mesh.dirichlet_nodes(), g)?;
        let mut x0 = prev.to_vec();
        for &i in mesh.dirichlet_nodes() {
            x0[i] = g[i];
        }
        let (x, stats) = bicgstab_solve(
            &a,
            &rhs,
            &x0,
            sc.solver.krylov.rel_tol,
            sc.solver.krylov.max_iter_for(prev.len()),
        )
        .map_err(|source| StepFailure::Linear { field, source })?;
        if !stats.accepted() {
            return Err(StepFailure::LinearNotConverged { field, stats });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(StepFailure::NonFinite(field));
        }
        Ok((x, stats))
    }

    /// One step from `prev` (at level `step − 1`) to level `step`.
    pub fn advance(&self, prev: &State, step: usize) -> Result<(State, StepReport), StepError> {
        let t_new = self.scenario.time(step);
        self.advance_inner(prev, t_new).map_err(|failure| StepError {
            step,
            t: t_new,
            failure,
        })
    }

    fn advance_inner(&self, prev: &State, t_new: f64) -> Result<(State, StepReport), StepFailure> {
        let sc = self.scenario;
        let cs = &sc.coefficients;
        let sources = self.sources(t_new);
        let src = |f: Field| sources.as_ref().map(|s| s[f.index()].as_slice());
        let g = sc.dirichlet_values(t_new);

        let uo = self.u_step(prev, t_new, src(Field::U), &g[0])?;
        let u_new = uo.u;

        let a_prev = self.map(&prev.theta, |t| cs.a(t));
        let c = self.asm.convection(&a_prev, &u_new, sc.solver.upwind)?;
        let b_new = self.map(&u_new, |z| cs.b(z));
        let b_old = self.map(&prev.u, |z| cs.b(z));

        let w_job = || {
            let kappa: Vec<f64> = prev.u.iter().zip(&b_old).map(|(&z, b)| b * cs.dw(z)).collect();
            self.transport_solve(Field::W, &kappa, &c, &b_new, &b_old, &prev.w, src(Field::W), &g[1])
        };
        let theta_job = || {
            let kappa: Vec<f64> = prev.theta.iter().zip(&prev.u).map(|(&t, &z)| cs.lambda(t, z)).collect();
            let cap_new: Vec<f64> = b_new.iter().map(|b| b + cs.rho).collect();
            let cap_old: Vec<f64> = b_old.iter().map(|b| b + cs.rho).collect();
            self.transport_solve(
                Field::Theta,
                &kappa,
                &c,
                &cap_new,
                &cap_old,
                &prev.theta,
                src(Field::Theta),
                &g[2],
            )
        };
        let (w_res, th_res) = rayon::join(w_job, theta_job);
        let (w, w_solve) = w_res?;
        let (theta, theta_solve) = th_res?;
        Ok((
            State {
                t: t_new,
                u: u_new,
                w,
                theta,
            },
            StepReport {
                newton: uo.report,
                w_solve,
                theta_solve,
                dissipation: uo.dissipation,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::Family;
    use crate::linalg::dense_lu_solve;
    use crate::mesh::{generate_rect_mesh, Marker, SideMarkers};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coeffs(b: &str, a: &str, dw: &str, lambda: &str, rho: f64) -> CoefficientSet {
        CoefficientSet::new(
            Family::parse(b).unwrap(),
            Family::parse(a).unwrap(),
            Family::parse(dw).unwrap(),
            Family::parse(lambda).unwrap(),
            Some(1e6),
            rho,
        )
        .unwrap()
    }

    fn identity_b() -> &'static str {
        "linear-clamped slope=1 offset=0 lo=-1e30 hi=1e30"
    }

    fn scenario(mesh: Mesh, cs: CoefficientSet, tau: f64, g: [f64; 3], init: [Vec<f64>; 3]) -> Scenario {
        Scenario::new(
            Arc::new(mesh),
            cs,
            tau,
            tau,
            BoundaryValues {
                u: g[0],
                w: g[1],
                theta: g[2],
            },
            init,
        )
        .unwrap()
    }

    fn square(nx: usize, markers: SideMarkers) -> Mesh {
        generate_rect_mesh(nx, nx, 1.0, 1.0, markers).unwrap()
    }

    #[test]
    fn scenario_rejects_bad_time_grid() {
        let mesh = Arc::new(square(1, SideMarkers::all(Marker::Dirichlet)));
        let cs = coeffs(identity_b(), "constant value=1", "constant value=1", "constant value=1", 1.0);
        let bv = BoundaryValues { u: 0.0, w: 0.0, theta: 0.0 };
        let init = [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]];
        assert!(matches!(
            Scenario::new(mesh.clone(), cs.clone(), -0.1, 1.0, bv, init.clone()),
            Err(ScenarioError::Tau(_))
        ));
        assert!(matches!(
            Scenario::new(mesh.clone(), cs.clone(), 0.3, 1.0, bv, init.clone()),
            Err(ScenarioError::NotMultiple { .. })
        ));
        let sc = Scenario::new(mesh, cs, 0.01, 1.0, bv, init).unwrap();
        assert_eq!(sc.steps(), 100);
        assert_eq!(sc.time(100), 1.0);
    }

    #[test]
    fn zero_problem_is_a_fixed_point() {
        let mesh = square(1, SideMarkers::all(Marker::Dirichlet));
        let cs = coeffs(identity_b(), "constant value=1", "constant value=1", "constant value=1", 1.0);
        // b is the identity here, so the level must stay positive for the
        // solute diffusion weight b·D_w.
        let sc = scenario(mesh, cs, 0.1, [1.0, 0.0, 0.0], [vec![1.0; 4], vec![0.0; 4], vec![0.0; 4]]);
        let st = Stepper::new(&sc);
        let (next, rep) = st.advance(&sc.initial_state(), 1).unwrap();
        assert!(next.u.iter().all(|&v| v == 1.0));
        assert!(rep.newton.iterations <= 1);
    }

    #[test]
    fn linear_b_step_is_backward_euler() {
        // Neumann on three sides so the free block is nontrivial on a 2×2 mesh.
        let mesh = square(2, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(identity_b(), "constant value=1", "constant value=1", "constant value=1", 1.0);
        let u0: Vec<f64> = mesh.nodes().iter().map(|p| 2.0 + p[0] * p[0] + 0.5 * p[1]).collect();
        let tau = 0.05;
        let sc = scenario(mesh.clone(), cs, tau, [1.0, 0.0, 0.0], [u0.clone(), vec![0.0; n], vec![0.0; n]]);
        let st = Stepper::new(&sc);
        let (next, _) = st.advance(&sc.initial_state(), 1).unwrap();

        let asm = Assembler::new(&mesh);
        let k = asm.stiffness(&vec![1.0; n]).unwrap().to_dense();
        let m = asm.node_area();
        let prev = sc.initial_state().u;
        let free: Vec<usize> = (0..n).filter(|&i| !mesh.is_dirichlet(i)).collect();
        let a: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| k[i][j] + if i == j { m[i] / tau } else { 0.0 }).collect())
            .collect();
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| m[i] * prev[i] / tau - mesh.dirichlet_nodes().iter().map(|&j| k[i][j] * 1.0).sum::<f64>())
            .collect();
        let x = dense_lu_solve(&a, &rhs).unwrap();
        for (xi, &i) in x.iter().zip(&free) {
            assert!((xi - next.u[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn logistic_newton_is_monotone_and_matches_picard() {
        let mesh = square(4, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(
            "logistic lo=0.05 hi=0.40",
            "vg kmin=0.1 kmax=2 alpha=0.5 n=2",
            "constant value=1",
            "constant value=1",
            1.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let th0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let tau = 0.1;
        let sc = scenario(mesh.clone(), cs.clone(), tau, [-0.5, 0.0, 0.0], [u0, vec![0.0; n], th0]);
        let st = Stepper::new(&sc);
        let s0 = sc.initial_state();
        let (next, rep) = st.advance(&s0, 1).unwrap();
        assert!(rep.newton.iterations <= 20);
        assert!(rep.newton.history.windows(2).all(|w| w[1] < w[0]));

        // Damped Picard: (L/τ M + K) U⁺ = L/τ M U − M(b(U) − b(U_prev))/τ, L ≥ sup b′.
        let asm = Assembler::new(&mesh);
        let k = asm.stiffness(&s0.theta.iter().map(|&t| cs.a(t)).collect::<Vec<_>>()).unwrap();
        let m = asm.node_area();
        let lip = 0.35 / 4.0;
        let mut op = k.clone();
        op.add_diagonal(&m.iter().map(|mi| lip * mi / tau).collect::<Vec<_>>());
        let g = vec![-0.5; n];
        let mut dummy = vec![0.0; n];
        apply_dirichlet(&mut op, &mut dummy, &mesh, mesh.dirichlet_nodes(), &g).unwrap();
        let dense = op.to_dense();
        let mut u = s0.u.clone();
        for _ in 0..1_000_000 {
            let mut rhs: Vec<f64> = (0..n)
                .map(|i| m[i] / tau * (lip * u[i] - (cs.b(u[i]) - cs.b(s0.u[i]))))
                .collect();
            for i in 0..n {
                if mesh.is_dirichlet(i) {
                    rhs[i] = g[i];
                } else {
                    for &j in mesh.dirichlet_nodes() {
                        rhs[i] -= k.get(i, j) * g[j];
                    }
                }
            }
            let un = dense_lu_solve(&dense, &rhs).unwrap();
            let change = un.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            u = un;
            if change < 1e-15 {
                break;
            }
        }
        for i in 0..n {
            assert!((u[i] - next.u[i]).abs() <= 1e-8, "node {i}");
        }
    }

    #[test]
    fn constant_transport_fields_are_preserved() {
        let mesh = square(3, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(
            "logistic lo=0.05 hi=0.40",
            "vg kmin=0.1 kmax=2 alpha=0.5 n=2",
            "vg kmin=0.1 kmax=1 alpha=1 n=2",
            "affine c0=2 ct=0.1",
            1.0,
        );
        let u0: Vec<f64> = mesh.nodes().iter().map(|p| -1.0 - p[0]).collect();
        let sc = scenario(mesh, cs, 0.1, [-1.0, 0.7, 0.3], [u0, vec![0.7; n], vec![0.3; n]]);
        let st = Stepper::new(&sc);
        let (next, _) = st.advance(&sc.initial_state(), 1).unwrap();
        for i in 0..n {
            assert!((next.w[i] - 0.7).abs() < 1e-9);
            assert!((next.theta[i] - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_heat_capacity_freezes_theta() {
        let mesh = square(3, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs("logistic lo=0.05 hi=0.40", "constant value=1", "constant value=1", "constant value=1", 1e8);
        let th0: Vec<f64> = mesh.nodes().iter().map(|p| p[0] * p[1]).collect();
        let sc = scenario(mesh, cs, 0.1, [-1.0, 0.0, 0.0], [vec![-1.0; n], vec![0.0; n], th0]);
        let st = Stepper::new(&sc);
        let s0 = sc.initial_state();
        let (next, _) = st.advance(&s0, 1).unwrap();
        let dev = next.theta.iter().zip(&s0.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-6);
    }

    #[test]
    fn steady_state_is_kept_for_many_steps() {
        let mesh = square(4, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(
            "logistic lo=0.05 hi=0.40",
            "vg kmin=0.1 kmax=2 alpha=0.5 n=2",
            "constant value=0.5",
            "affine c0=2 ct=0.1",
            1.0,
        );
        let sc = scenario(mesh, cs, 0.01, [-0.5, 1.0, 2.0], [vec![-0.5; n], vec![1.0; n], vec![2.0; n]]);
        let st = Stepper::new(&sc);
        let mut s = sc.initial_state();
        for step in 1..=100 {
            s = st.advance(&s, step).unwrap().0;
        }
        for i in 0..n {
            assert!((s.u[i] + 0.5).abs() <= 1e-12);
            assert!((s.w[i] - 1.0).abs() <= 1e-12);
            assert!((s.theta[i] - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn jacobian_is_positive_definite_on_free_nodes() {
        let mesh = square(4, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(
            "logistic lo=0.05 hi=0.40 k=3",
            "vg kmin=0 kmax=2 alpha=0.5 n=2",
            "constant value=1",
            "constant value=1",
            1.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..5.0)).collect();
        let th: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sc = scenario(mesh.clone(), cs, 0.5, [0.0; 3], [u.clone(), vec![0.0; n], th.clone()]);
        let j = Stepper::new(&sc).jacobian(&u, &th).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n)
                .map(|i| if mesh.is_dirichlet(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect();
            assert!(j.quadratic_form(&x) > 0.0);
        }
    }

    #[test]
    fn w_step_is_affine_in_previous_w() {
        let mesh = square(4, SideMarkers::left_dirichlet());
        let n = mesh.node_count();
        let cs = coeffs(
            "logistic lo=0.05 hi=0.40",
            "vg kmin=0.1 kmax=2 alpha=0.5 n=2",
            "constant value=0.3",
            "constant value=1",
            1.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let w_of = |w0: Vec<f64>| {
            let sc = scenario(mesh.clone(), cs.clone(), 0.1, [-1.0, 0.0, 0.0], [u0.clone(), w0, vec![0.0; n]]);
            let mut solver = SolverSettings::default();
            solver.krylov.rel_tol = 1e-14;
            let sc = sc.with_solver(solver);
            Stepper::new(&sc).advance(&sc.initial_state(), 1).unwrap().0.w
        };
        let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
        let (r1, r2, rc) = (w_of(w1), w_of(w2), w_of(combo));
        for i in 0..n {
            assert!((rc[i] - (0.3 * r1[i] + 0.7 * r2[i])).abs() <= 1e-12);
        }
    }
}
