//! Refinement studies: error against manufactured solutions with fitted
//! orders, and mesh-to-mesh (Cauchy) differences for scenarios without a
//! known solution. Cells are independent and run on the rayon pool.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::Assembler;
use crate::mesh::{generate_rect_mesh, Marker, Mesh, SideMarkers};
use crate::output::fmt_f64;
use crate::stepper::{BoundaryValues, Scenario, ScenarioError, SolverSettings, State, StepError, Stepper};

use super::mms::ManufacturedCase;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("cell n = {n}, {steps} steps: {source}")]
    Cell {
        n: usize,
        steps: usize,
        #[source]
        source: StepError,
    },
    #[error("cell n = {n}, {steps} steps: {source}")]
    Setup {
        n: usize,
        steps: usize,
        #[source]
        source: ScenarioError,
    },
    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: StepError,
    },
    #[error("invalid study: {0}")]
    Plan(String),
}

/// One `(mesh, time grid)` resolution: an `n×n` grid and `steps` time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyCell {
    pub n: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub h: f64,
    pub tau: f64,
    pub err: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    H,
    Tau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

/// Smallest acceptable fitted order of the spatial sweep (τ ∝ h²).
pub const SPATIAL_ORDER_MIN: f64 = 1.7;
/// Smallest acceptable fitted order of the temporal sweep.
pub const TEMPORAL_ORDER_MIN: f64 = 0.8;

/// Errors below this are treated as exact and carry no rate information.
const EXACT: f64 = 1e-13;

/// Least-squares slope of `ln err` against `ln x`; `None` with fewer than two
/// points or when an error is at roundoff level.
pub fn fit_order(xs: &[f64], errs: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != errs.len() || errs.iter().any(|&e| !(e > EXACT)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxe: f64 = lx.iter().zip(&le).map(|(x, e)| (x - mx) * (e - me)).sum();
    (sxx > 0.0).then(|| sxe / sxx)
}

impl RateTable {
    pub fn orders(&self, axis: Axis) -> [Option<f64>; 3] {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .map(|r| match axis {
                Axis::H => r.h,
                Axis::Tau => r.tau,
            })
            .collect();
        std::array::from_fn(|f| fit_order(&xs, &self.rows.iter().map(|r| r.err[f]).collect::<Vec<_>>()))
    }

    /// Smallest fitted order over the fields that have one.
    pub fn min_order(&self, axis: Axis) -> Option<f64> {
        self.orders(axis).into_iter().flatten().reduce(f64::min)
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.err).fold(0.0, f64::max)
    }

    pub fn to_csv(&self, axis: Axis) -> String {
        let mut s = String::from("h,tau,err_u,err_w,err_th\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_f64(r.h),
                fmt_f64(r.tau),
                fmt_f64(r.err[0]),
                fmt_f64(r.err[1]),
                fmt_f64(r.err[2])
            );
        }
        let fmt = |o: Option<f64>| o.map_or("exact".to_string(), |v| format!("{v:.3}"));
        let [ou, ow, ot] = self.orders(axis);
        let _ = writeln!(
            s,
            "# order in {}: u {}, w {}, th {}",
            match axis {
                Axis::H => "h",
                Axis::Tau => "tau",
            },
            fmt(ou),
            fmt(ow),
            fmt(ot)
        );
        s
    }
}

/// Unit-square-type rectangle, Dirichlet on every side.
fn mms_scenario(
    case: &Arc<ManufacturedCase>,
    cell: StudyCell,
    t_end: f64,
    lx: f64,
    ly: f64,
    solver: &SolverSettings,
) -> Result<Scenario, ScenarioError> {
    let mesh = generate_rect_mesh(cell.n, cell.n, lx, ly, SideMarkers::all(Marker::Dirichlet)).expect("n >= 1");
    let mut initial = [Vec::new(), Vec::new(), Vec::new()];
    for (f, field) in initial.iter_mut().enumerate() {
        *field = mesh.nodes().iter().map(|&[x, y]| case.exact(x, y, 0.0)[f]).collect();
    }
    let g = case.exact(0.0, 0.0, 0.0);
    let sc = Scenario::new(
        Arc::new(mesh),
        case.coefficients.clone(),
        t_end / cell.steps as f64,
        t_end,
        BoundaryValues {
            u: g[0],
            w: g[1],
            theta: g[2],
        },
        initial,
    )?;
    Ok(sc.with_forcing(case.clone()).with_solver(*solver))
}

/// `‖U − u*‖_{L²(Q_T)}` per field, with the piecewise-constant-in-time
/// reconstruction and nodal quadrature in space.
pub fn mms_error(
    case: &Arc<ManufacturedCase>,
    cell: StudyCell,
    t_end: f64,
    lx: f64,
    ly: f64,
    solver: &SolverSettings,
) -> Result<RateRow, StudyError> {
    let StudyCell { n, steps } = cell;
    let sc = mms_scenario(case, cell, t_end, lx, ly, solver).map_err(|source| StudyError::Setup { n, steps, source })?;
    let stepper = Stepper::new(&sc);
    let m = stepper.assembler().node_area().to_vec();
    let mut state = sc.initial_state();
    let mut sq = [0.0; 3];
    for step in 1..=steps {
        let (next, _) = stepper
            .advance(&state, step)
            .map_err(|source| StudyError::Cell { n, steps, source })?;
        for (i, &[x, y]) in sc.mesh.nodes().iter().enumerate() {
            let exact = case.exact(x, y, next.t);
            for f in 0..3 {
                let d = next.field(crate::stepper::Field::ALL[f])[i] - exact[f];
                sq[f] += sc.tau * m[i] * d * d;
            }
        }
        state = next;
    }
    Ok(RateRow {
        h: lx.max(ly) / n as f64,
        tau: sc.tau,
        err: sq.map(f64::sqrt),
    })
}

/// Runs every cell (concurrently) and tabulates the errors in the given order.
pub fn convergence_study(
    case: &Arc<ManufacturedCase>,
    cells: &[StudyCell],
    t_end: f64,
    lx: f64,
    ly: f64,
    solver: &SolverSettings,
) -> Result<RateTable, StudyError> {
    let rows = cells
        .par_iter()
        .map(|&cell| mms_error(case, cell, t_end, lx, ly, solver))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateTable { rows })
}

/// Spatial sweep (τ ≈ c·h²) and temporal sweep (fixed fine mesh).
#[derive(Debug, Clone, PartialEq)]
pub struct MmsPlan {
    pub t_end: f64,
    pub spatial: Vec<StudyCell>,
    pub temporal: Vec<StudyCell>,
}

impl MmsPlan {
    /// `τ = T / round(T / (c h²))` with `h = 1/n`.
    pub fn new(t_end: f64, spatial_n: &[usize], spatial_c: f64, temporal_n: usize, temporal_steps: &[usize]) -> Self {
        let spatial = spatial_n
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                StudyCell {
                    n,
                    steps: ((t_end / (spatial_c * h * h)).round() as usize).max(1),
                }
            })
            .collect();
        let temporal = temporal_steps
            .iter()
            .map(|&steps| StudyCell { n: temporal_n, steps })
            .collect();
        MmsPlan {
            t_end,
            spatial,
            temporal,
        }
    }

    fn check(&self) -> Result<(), StudyError> {
        for (name, cells) in [("spatial", &self.spatial), ("temporal", &self.temporal)] {
            if cells.len() < 3 {
                return Err(StudyError::Plan(format!("{name} sweep needs at least 3 cells")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsReport {
    pub spatial: RateTable,
    pub temporal: RateTable,
}

impl MmsReport {
    /// Both sweeps reach their minimum order; a sweep without rate
    /// information (errors at roundoff) passes.
    pub fn passed(&self) -> bool {
        self.spatial_order().is_none_or(|o| o >= SPATIAL_ORDER_MIN)
            && self.temporal_order().is_none_or(|o| o >= TEMPORAL_ORDER_MIN)
    }

    pub fn spatial_order(&self) -> Option<f64> {
        self.spatial.min_order(Axis::H)
    }

    pub fn temporal_order(&self) -> Option<f64> {
        self.temporal.min_order(Axis::Tau)
    }
}

pub fn mms_study(case: &Arc<ManufacturedCase>, plan: &MmsPlan, solver: &SolverSettings) -> Result<MmsReport, StudyError> {
    plan.check()?;
    let (spatial, temporal) = rayon::join(
        || convergence_study(case, &plan.spatial, plan.t_end, 1.0, 1.0, solver),
        || convergence_study(case, &plan.temporal, plan.t_end, 1.0, 1.0, solver),
    );
    Ok(MmsReport {
        spatial: spatial?,
        temporal: temporal?,
    })
}

/// Nodal values of a coarse P1 field at the nodes of its midpoint refinement.
#[derive(Debug, Clone)]
pub struct Prolongation {
    /// Each fine node is the average of one or two coarse nodes.
    parents: Vec<(usize, usize)>,
}

fn key(p: [f64; 2]) -> (i64, i64) {
    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
}

impl Prolongation {
    pub fn new(coarse: &Mesh, fine: &Mesh) -> Result<Self, StudyError> {
        let mut lookup: HashMap<(i64, i64), (usize, usize)> = HashMap::new();
        for (i, &p) in coarse.nodes().iter().enumerate() {
            lookup.insert(key(p), (i, i));
        }
        for tri in coarse.triangles() {
            for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                let [pa, pb] = [coarse.nodes()[a], coarse.nodes()[b]];
                lookup
                    .entry(key([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]))
                    .or_insert((a.min(b), a.max(b)));
            }
        }
        let parents = fine
            .nodes()
            .iter()
            .map(|&p| {
                lookup.get(&key(p)).copied().ok_or_else(|| {
                    StudyError::Plan(format!(
                        "fine node ({}, {}) is neither a coarse node nor an edge midpoint",
                        p[0], p[1]
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Prolongation { parents })
    }

    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        self.parents
            .iter()
            .map(|&(a, b)| if a == b { coarse[a] } else { 0.5 * (coarse[a] + coarse[b]) })
            .collect()
    }
}

/// `‖u_coarse − u_fine‖_{L²(Q_T)}` per field for one refinement pair, both
/// runs advanced in lockstep. The coarse solution is prolongated in space
/// and held constant over each coarse step.
pub fn cauchy_difference(coarse: &Scenario, fine: &Scenario, level: usize) -> Result<[f64; 3], StudyError> {
    let ratio = (coarse.tau / fine.tau).round() as usize;
    if ratio == 0 || (ratio as f64 * fine.tau - coarse.tau).abs() > 1e-9 * coarse.tau {
        return Err(StudyError::Plan(format!(
            "level {level}: coarse tau {} is not a multiple of fine tau {}",
            coarse.tau, fine.tau
        )));
    }
    if fine.steps() != ratio * coarse.steps() {
        return Err(StudyError::Plan(format!("level {level}: time horizons differ")));
    }
    let prolong = Prolongation::new(&coarse.mesh, &fine.mesh)?;
    let cs = Stepper::new(coarse);
    let fs = Stepper::new(fine);
    let m = Assembler::new(&fine.mesh).node_area().to_vec();
    let mut c_state = coarse.initial_state();
    let mut f_state = fine.initial_state();
    let mut sq = [0.0; 3];
    let fail = |source| StudyError::Level { level, source };
    for n in 1..=coarse.steps() {
        c_state = cs.advance(&c_state, n).map_err(fail)?.0;
        let lifted: [Vec<f64>; 3] = [
            prolong.apply(&c_state.u),
            prolong.apply(&c_state.w),
            prolong.apply(&c_state.theta),
        ];
        for k in 1..=ratio {
            f_state = fs.advance(&f_state, (n - 1) * ratio + k).map_err(fail)?.0;
            accumulate(&mut sq, fine.tau, &m, &f_state, &lifted);
        }
    }
    Ok(sq.map(f64::sqrt))
}

fn accumulate(sq: &mut [f64; 3], tau: f64, m: &[f64], fine: &State, coarse: &[Vec<f64>; 3]) {
    for (f, fine_values) in [&fine.u, &fine.w, &fine.theta].into_iter().enumerate() {
        sq[f] += tau
            * fine_values
                .iter()
                .zip(&coarse[f])
                .zip(m)
                .map(|((a, b), mi)| mi * (a - b) * (a - b))
                .sum::<f64>();
    }
}

/// Differences between consecutive levels of a refinement ladder, one row per
/// adjacent pair, all pairs concurrently.
pub fn cauchy_study(levels: &[Scenario]) -> Result<Vec<[f64; 3]>, StudyError> {
    if levels.len() < 2 {
        return Err(StudyError::Plan("a Cauchy study needs at least two levels".into()));
    }
    (0..levels.len() - 1)
        .into_par_iter()
        .map(|l| cauchy_difference(&levels[l], &levels[l + 1], l))
        .collect()
}

/// True when every field's differences strictly decrease along the ladder.
pub fn strictly_decreasing(diffs: &[[f64; 3]]) -> [bool; 3] {
    std::array::from_fn(|f| diffs.windows(2).all(|w| w[1][f] < w[0][f]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{CoefficientSet, Family};
    use crate::verify::mms::{build_mms_case, Profile};

    fn smooth() -> CoefficientSet {
        CoefficientSet::new(
            Family::parse("logistic lo=0.05 hi=0.4").unwrap(),
            Family::parse("vg kmin=0.5 kmax=2 alpha=1 n=2").unwrap(),
            Family::parse("constant value=0.5").unwrap(),
            Family::parse("affine c0=1 ct=0.5").unwrap(),
            None,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn fit_recovers_power_laws() {
        let xs = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((fit_order(&xs, &errs).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_order(&xs, &[1.0, 0.0, 1.0]), None);
        assert_eq!(fit_order(&[0.1], &[1.0]), None);
    }

    #[test]
    fn constants_have_zero_error_everywhere() {
        let case = Arc::new(build_mms_case("const", smooth(), 1.0, 1.0).unwrap());
        let cells = [StudyCell { n: 2, steps: 2 }, StudyCell { n: 4, steps: 4 }];
        let t = convergence_study(&case, &cells, 0.5, 1.0, 1.0, &SolverSettings::default()).unwrap();
        assert!(t.max_error() < 1e-14, "{}", t.max_error());
        assert_eq!(t.orders(Axis::H), [None; 3]);
    }

    #[test]
    fn linear_steady_patch_is_reproduced() {
        let cs = CoefficientSet::new(
            Family::parse("logistic lo=0.05 hi=0.4").unwrap(),
            Family::parse("constant value=1").unwrap(),
            Family::parse("constant value=0.5").unwrap(),
            Family::parse("constant value=1").unwrap(),
            None,
            1.0,
        )
        .unwrap();
        let lin = Profile::Linear {
            c: -1.0,
            gx: 0.5,
            gy: 0.25,
        };
        let case = Arc::new(ManufacturedCase::new(
            "patch",
            [lin, Profile::Constant(0.4), Profile::Constant(0.7)],
            cs,
        ));
        let row = mms_error(&case, StudyCell { n: 4, steps: 5 }, 0.5, 1.0, 1.0, &SolverSettings::default()).unwrap();
        assert!(row.err.iter().all(|&e| e < 1e-12), "{:?}", row.err);
    }

    #[test]
    fn plan_uses_parabolic_scaling() {
        let p = MmsPlan::new(1.0, &[8, 16], 1.0, 64, &[10, 20, 40]);
        assert_eq!(p.spatial, vec![StudyCell { n: 8, steps: 64 }, StudyCell { n: 16, steps: 256 }]);
        assert!(matches!(p.check(), Err(StudyError::Plan(_))));
    }

    #[test]
    fn csv_has_header_rows_and_summary() {
        let t = RateTable {
            rows: vec![
                RateRow {
                    h: 0.5,
                    tau: 0.1,
                    err: [4e-2, 1e-3, 0.0],
                },
                RateRow {
                    h: 0.25,
                    tau: 0.1,
                    err: [1e-2, 2.5e-4, 0.0],
                },
            ],
        };
        let csv = t.to_csv(Axis::H);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h,tau,err_u,err_w,err_th");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "# order in h: u 2.000, w 2.000, th exact");
        assert!((t.min_order(Axis::H).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn prolongation_reproduces_linears() {
        let coarse = generate_rect_mesh(3, 2, 1.5, 1.0, SideMarkers::left_dirichlet()).unwrap();
        let fine = generate_rect_mesh(6, 4, 1.5, 1.0, SideMarkers::left_dirichlet()).unwrap();
        let p = Prolongation::new(&coarse, &fine).unwrap();
        let f = |q: &[f64; 2]| 1.0 + 2.0 * q[0] - 3.0 * q[1];
        let lifted = p.apply(&coarse.nodes().iter().map(f).collect::<Vec<_>>());
        for (v, q) in lifted.iter().zip(fine.nodes()) {
            assert!((v - f(q)).abs() < 1e-14);
        }
        let other = generate_rect_mesh(5, 4, 1.5, 1.0, SideMarkers::left_dirichlet()).unwrap();
        assert!(Prolongation::new(&coarse, &other).is_err());
    }
}
