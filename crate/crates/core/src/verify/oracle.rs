//! Brute-force reference for one step on tiny meshes: dense matrices built
//! by explicit quadrature, nonlinear Gauss–Seidel with scalar bisection for
//! `u`, dense LU for `w` and `θ`. Shares nothing with the production path
//! except the mesh and the constitutive laws.

use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

use crate::constitutive::{CoefficientSet, ConstitutiveError, Family};
use crate::linalg::{dense_lu_solve, LinalgError};
use crate::mesh::{generate_rect_mesh, Mesh, SideMarkers};
use crate::stepper::{BoundaryValues, Scenario, ScenarioError, State, StepError, Stepper};

pub const ORACLE_MAX_NODES: usize = 12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle meshes are limited to {ORACLE_MAX_NODES} nodes, got {0}")]
    TooLarge(usize),
    #[error("production step: {0}")]
    Production(#[from] StepError),
    #[error("oracle linear solve: {0}")]
    Linear(#[from] LinalgError),
    #[error("oracle bisection found no bracket at node {0}")]
    NoBracket(usize),
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("coefficients: {0}")]
    Coefficients(#[from] ConstitutiveError),
}

type Dense = Vec<Vec<f64>>;

/// Gradients of the three barycentric coordinates, from inverting
/// `[[1, x_m, y_m]]`, and the area.
fn barycentric(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let m = [
        [1.0, p[0][0], p[0][1]],
        [1.0, p[1][0], p[1][1]],
        [1.0, p[2][0], p[2][1]],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    // Columns of the inverse are the coefficient vectors (c, ∂x, ∂y) of each λ_m.
    let cof = |r: usize, c: usize| {
        let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let cols: Vec<usize> = (0..3).filter(|&j| j != c).collect();
        let minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]];
        if (r + c).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let mut grads = [[0.0; 2]; 3];
    for (v, g) in grads.iter_mut().enumerate() {
        // inverse[k][v] = cof(v, k) / det
        g[0] = cof(v, 1) / det;
        g[1] = cof(v, 2) / det;
    }
    (grads, 0.5 * det.abs())
}

/// Edge-midpoint rule: exact for quadratics on a triangle.
fn midpoint_rule(area: f64, f: impl Fn([f64; 3]) -> f64) -> f64 {
    let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
    area / 3.0 * mids.iter().map(|&l| f(l)).sum::<f64>()
}

struct DenseOps<'m> {
    mesh: &'m Mesh,
}

impl DenseOps<'_> {
    fn n(&self) -> usize {
        self.mesh.node_count()
    }

    fn corners(&self, tri: [usize; 3]) -> [[f64; 2]; 3] {
        tri.map(|v| self.mesh.nodes()[v])
    }

    /// `∫ κ_h ∇φ_j·∇φ_i` with `κ_h` the P1 interpolant.
    fn stiffness(&self, kappa: &[f64]) -> Dense {
        let mut k = vec![vec![0.0; self.n()]; self.n()];
        for &tri in self.mesh.triangles() {
            let (g, area) = barycentric(self.corners(tri));
            let kv = tri.map(|v| kappa[v]);
            let integral = midpoint_rule(area, |l| l[0] * kv[0] + l[1] * kv[1] + l[2] * kv[2]);
            for a in 0..3 {
                for b in 0..3 {
                    k[tri[a]][tri[b]] += integral * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        k
    }

    /// Row sums of the consistent mass matrix `∫ φ_j φ_i`.
    fn lumped(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n()];
        for &tri in self.mesh.triangles() {
            let (_, area) = barycentric(self.corners(tri));
            for a in 0..3 {
                for b in 0..3 {
                    m[tri[a]] += midpoint_rule(area, |l| l[a] * l[b]);
                }
            }
        }
        m
    }

    /// `∫ ā_T (∇u_h·∇φ_i) φ_j` with the mobility frozen at its element mean.
    fn convection(&self, a: &[f64], u: &[f64]) -> Dense {
        let mut c = vec![vec![0.0; self.n()]; self.n()];
        for &tri in self.mesh.triangles() {
            let (g, area) = barycentric(self.corners(tri));
            let av = tri.map(|v| a[v]);
            let a_bar = midpoint_rule(1.0, |l| l[0] * av[0] + l[1] * av[1] + l[2] * av[2]);
            let gu = (0..3).fold([0.0; 2], |acc, m| [acc[0] + u[tri[m]] * g[m][0], acc[1] + u[tri[m]] * g[m][1]]);
            for i in 0..3 {
                let s = a_bar * (gu[0] * g[i][0] + gu[1] * g[i][1]);
                for j in 0..3 {
                    c[tri[i]][tri[j]] += s * midpoint_rule(area, |l| l[j]);
                }
            }
        }
        c
    }
}

/// Solves `A x = rhs` with `x = g` on Dirichlet nodes by reducing to the free block.
fn dense_constrained(mesh: &Mesh, a: &Dense, rhs: &[f64], g: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let free: Vec<usize> = (0..rhs.len()).filter(|&i| !mesh.is_dirichlet(i)).collect();
    let mut x = vec![0.0; rhs.len()];
    for &d in mesh.dirichlet_nodes() {
        x[d] = g[d];
    }
    if free.is_empty() {
        return Ok(x);
    }
    let af: Dense = free.iter().map(|&i| free.iter().map(|&j| a[i][j]).collect()).collect();
    let bf: Vec<f64> = free
        .iter()
        .map(|&i| rhs[i] - mesh.dirichlet_nodes().iter().map(|&d| a[i][d] * g[d]).sum::<f64>())
        .collect();
    let xf = dense_lu_solve(&af, &bf)?;
    for (k, &i) in free.iter().enumerate() {
        x[i] = xf[k];
    }
    Ok(x)
}

/// Root of the increasing scalar map `f` near `start`, by bracketing and bisection.
fn bisect(f: impl Fn(f64) -> f64, start: f64) -> Option<f64> {
    let f0 = f(start);
    if f0 == 0.0 {
        return Some(start);
    }
    let dir = if f0 > 0.0 { -1.0 } else { 1.0 };
    let mut width = 1e-3 * (1.0 + start.abs());
    let (mut lo, mut hi) = (start, start);
    for _ in 0..200 {
        let probe = start + dir * width;
        if (f(probe) > 0.0) != (f0 > 0.0) {
            (lo, hi) = if dir > 0.0 { (start, probe) } else { (probe, start) };
            break;
        }
        width *= 2.0;
    }
    if lo == hi {
        return None;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Some(if f(lo).abs() <= f(hi).abs() { lo } else { hi });
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// One step of the scheme computed the slow way.
pub fn oracle_step(sc: &Scenario, prev: &State, t_new: f64) -> Result<State, OracleError> {
    let mesh = &*sc.mesh;
    let n = mesh.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(OracleError::TooLarge(n));
    }
    let cs = &sc.coefficients;
    let tau = sc.tau;
    let ops = DenseOps { mesh };
    let m = ops.lumped();
    let g = sc.dirichlet_values(t_new);
    let src: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let [x, y] = mesh.nodes()[i];
            sc.forcing
                .as_ref()
                .map_or([0.0; 3], |f| f.source(x, y, t_new))
                .map(|v| m[i] * v)
        })
        .collect();

    let a_prev: Vec<f64> = prev.theta.iter().map(|&t| cs.a(t)).collect();
    let k = ops.stiffness(&a_prev);
    let b_prev: Vec<f64> = prev.u.iter().map(|&z| cs.b(z)).collect();

    let mut u = prev.u.clone();
    for &d in mesh.dirichlet_nodes() {
        u[d] = g[0][d];
    }
    for _sweep in 0..1_000_000 {
        let mut change = 0.0f64;
        for i in (0..n).filter(|&i| !mesh.is_dirichlet(i)) {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| k[i][j] * u[j]).sum();
            let res = |z: f64| m[i] * (cs.b(z) - b_prev[i]) / tau + k[i][i] * z + off - src[i][0];
            let z = bisect(res, u[i]).ok_or(OracleError::NoBracket(i))?;
            change = change.max((z - u[i]).abs());
            u[i] = z;
        }
        let scale = u.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        if change <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }

    let c = ops.convection(&a_prev, &u);
    let b_new: Vec<f64> = u.iter().map(|&z| cs.b(z)).collect();
    let transport = |kappa: Vec<f64>, cap_new: Vec<f64>, cap_old: Vec<f64>, old: &[f64], f: usize| {
        let mut a = ops.stiffness(&kappa);
        for i in 0..n {
            for j in 0..n {
                a[i][j] += c[i][j];
            }
            a[i][i] += m[i] * cap_new[i] / tau;
        }
        let rhs: Vec<f64> = (0..n).map(|i| m[i] * cap_old[i] * old[i] / tau + src[i][f]).collect();
        dense_constrained(mesh, &a, &rhs, &g[f])
    };
    let w = transport(
        (0..n).map(|i| b_prev[i] * cs.dw(prev.u[i])).collect(),
        b_new.clone(),
        b_prev.clone(),
        &prev.w,
        1,
    )?;
    let theta = transport(
        (0..n).map(|i| cs.lambda(prev.theta[i], prev.u[i])).collect(),
        b_new.iter().map(|b| b + cs.rho).collect(),
        b_prev.iter().map(|b| b + cs.rho).collect(),
        &prev.theta,
        2,
    )?;
    Ok(State { t: t_new, u, w, theta })
}

/// Largest nodal difference between the production step and [`oracle_step`]
/// for the first step of `sc`, over all three fields.
pub fn oracle_step_check(sc: &Scenario) -> Result<f64, OracleError> {
    let n = sc.mesh.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(OracleError::TooLarge(n));
    }
    let start = sc.initial_state();
    let (fast, _) = Stepper::new(sc).advance(&start, 1)?;
    let slow = oracle_step(sc, &start, sc.time(1))?;
    let dev = [
        (&fast.u, &slow.u),
        (&fast.w, &slow.w),
        (&fast.theta, &slow.theta),
    ]
    .iter()
    .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
    .fold(0.0, f64::max);
    Ok(dev)
}

/// A randomized single-step scenario on the two-triangle unit square with a
/// Dirichlet left edge: logistic `b`, van Genuchten `a` and `D_w`, affine `λ`.
pub fn random_two_triangle_scenario(rng: &mut impl Rng) -> Result<Scenario, OracleError> {
    let mesh = generate_rect_mesh(1, 1, 1.0, 1.0, SideMarkers::left_dirichlet()).expect("unit mesh");
    let lo = rng.gen_range(0.01..0.2);
    let b = Family::Logistic {
        lo,
        hi: lo + rng.gen_range(0.1..0.6),
        k: rng.gen_range(0.5..2.0),
        z0: rng.gen_range(-1.0..1.0),
    };
    let vg = |rng: &mut dyn rand::RngCore| {
        let kmin = rng.gen_range(0.01..0.5);
        Family::VanGenuchten {
            kmin,
            kmax: kmin + rng.gen_range(0.1..5.0),
            alpha: rng.gen_range(0.2..2.0),
            n: rng.gen_range(1.5..3.0),
        }
    };
    let a = vg(rng);
    let dw = vg(rng);
    let lambda = Family::Affine {
        c0: rng.gen_range(1.0..3.0),
        ct: rng.gen_range(0.0..0.5),
        cu: rng.gen_range(0.0..0.1),
    };
    let cs = CoefficientSet::new(b, a, dw, lambda, None, rng.gen_range(0.1..2.0))?;
    let n = mesh.node_count();
    let mut field = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let initial = [field(-3.0, 1.0), field(0.0, 1.0), field(0.0, 1.0)];
    let boundary = BoundaryValues {
        u: rng.gen_range(-3.0..1.0),
        w: rng.gen_range(0.0..1.0),
        theta: rng.gen_range(0.0..1.0),
    };
    let tau = rng.gen_range(0.01..0.5);
    Ok(Scenario::new(Arc::new(mesh), cs, tau, tau, boundary, initial)?)
}
