//! Per-step measurements and the audits built on them: bounds, energy,
//! time translates and the three conserved densities. All integrals use
//! lumped nodal quadrature, the same pairing the scheme itself uses.

use thiserror::Error;

use crate::assembly::Assembler;
use crate::constitutive::{CoefficientSet, ConstitutiveError};
use crate::stepper::{min_max, Field, FieldBounds, Scenario, State, StepReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("translate lag {k} out of range for {levels} stored levels (need 1 <= k < levels)")]
    Lag { k: usize, levels: usize },
    #[error("energy density: {0}")]
    Energy(#[from] ConstitutiveError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub t: f64,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub energy_b: f64,
    pub dissipation_cum: f64,
    pub grad_l2: [f64; 3],
    pub mass_b: f64,
    pub mass_bw: f64,
    pub mass_bth: f64,
    pub overshoot: [f64; 3],
    pub newton_iters: usize,
    pub lin_iters: [usize; 3],
}

/// `max(0, m − min, max − M)` per field.
pub fn linf_audit(state: &State, bounds: &FieldBounds) -> [f64; 3] {
    Field::ALL.map(|f| bounds.overshoot(f, state.field(f)))
}

/// `(∫b(u), ∫b(u)w, ∫(b(u)+ϱ)θ)`.
pub fn mass_audit(cs: &CoefficientSet, node_area: &[f64], state: &State) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..node_area.len() {
        let b = cs.b(state.u[i]);
        out[0] += node_area[i] * b;
        out[1] += node_area[i] * b * state.w[i];
        out[2] += node_area[i] * (b + cs.rho) * state.theta[i];
    }
    out
}

/// `∫B_g(u)` with `B_g(z) = b(z)(z − g) − ∫_g^z b`.
pub fn energy(cs: &CoefficientSet, node_area: &[f64], u: &[f64], g: f64) -> Result<f64, ConstitutiveError> {
    let mut e = 0.0;
    for (m, &z) in node_area.iter().zip(u) {
        e += m * cs.legendre_centered(z, g)?;
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    /// `E₀ − E_n − D_n` for every level `n`.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// `−1e-8·(1 + E₀)`.
    pub threshold: f64,
    pub passed: bool,
}

/// `energies[n] = ∫B_g(uⁿ)`, `dissipation_cum[n] = Σ_{m≤n} τ·UᵐᵀK(a(Θᵐ⁻¹))Uᵐ` (zero at `n = 0`).
pub fn energy_audit(energies: &[f64], dissipation_cum: &[f64]) -> EnergyAudit {
    let e0 = energies.first().copied().unwrap_or(0.0);
    let slack: Vec<f64> = energies
        .iter()
        .zip(dissipation_cum)
        .map(|(e, d)| e0 - e - d)
        .collect();
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = -1e-8 * (1.0 + e0);
    EnergyAudit {
        passed: slack.iter().all(|&s| s >= threshold),
        min_slack: if slack.is_empty() { 0.0 } else { min_slack },
        slack,
        threshold,
    }
}

/// Time-translate sums over the stored levels `u¹..uᵖ`, for lag `k`:
/// `Σ_j τ Σ_i M_i (b(u_i^{j+k}) − b(u_i^j))(u_i^{j+k} − u_i^j)` for `u` and
/// the plain squared differences for `w` and `θ`.
pub fn translate_audit(
    levels: &[State],
    cs: &CoefficientSet,
    node_area: &[f64],
    tau: f64,
    k: usize,
) -> Result<[f64; 3], DiagnosticsError> {
    if k == 0 || k >= levels.len() {
        return Err(DiagnosticsError::Lag {
            k,
            levels: levels.len(),
        });
    }
    let mut out = [0.0; 3];
    for (early, late) in levels.iter().zip(&levels[k..]) {
        for (i, m) in node_area.iter().enumerate() {
            let du = late.u[i] - early.u[i];
            out[0] += tau * m * cs.b_increment(early.u[i], late.u[i]) * du;
            let dw = late.w[i] - early.w[i];
            out[1] += tau * m * dw * dw;
            let dt = late.theta[i] - early.theta[i];
            out[2] += tau * m * dt * dt;
        }
    }
    Ok(out)
}

/// Per field, `value(k)/(kτ)` for each lag.
pub fn translate_ratios(
    levels: &[State],
    cs: &CoefficientSet,
    node_area: &[f64],
    tau: f64,
    lags: &[usize],
) -> Result<Vec<[f64; 3]>, DiagnosticsError> {
    lags.iter()
        .map(|&k| translate_audit(levels, cs, node_area, tau, k).map(|v| v.map(|x| x / (k as f64 * tau))))
        .collect()
}

/// Accumulates rows along a run and keeps the energy series.
#[derive(Debug, Clone)]
pub struct Monitor<'a> {
    scenario: &'a Scenario,
    node_area: Vec<f64>,
    bounds: FieldBounds,
    dissipation_cum: f64,
    energies: Vec<f64>,
    dissipation: Vec<f64>,
}

impl<'a> Monitor<'a> {
    pub fn new(scenario: &'a Scenario, asm: &Assembler<'_>) -> Self {
        Monitor {
            scenario,
            node_area: asm.node_area().to_vec(),
            bounds: scenario.bounds(),
            dissipation_cum: 0.0,
            energies: Vec::new(),
            dissipation: Vec::new(),
        }
    }

    pub fn bounds(&self) -> &FieldBounds {
        &self.bounds
    }

    pub fn node_area(&self) -> &[f64] {
        &self.node_area
    }

    /// Row for level `step`; `report` is `None` for the initial level.
    pub fn observe(
        &mut self,
        asm: &Assembler<'_>,
        step: usize,
        state: &State,
        report: Option<&StepReport>,
    ) -> Result<DiagnosticsRow, DiagnosticsError> {
        let cs = &self.scenario.coefficients;
        if let Some(r) = report {
            self.dissipation_cum += r.dissipation;
        }
        let energy_b = energy(cs, &self.node_area, &state.u, self.scenario.boundary.u)?;
        self.energies.push(energy_b);
        self.dissipation.push(self.dissipation_cum);
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for f in Field::ALL {
            (min[f.index()], max[f.index()]) = min_max(state.field(f));
        }
        let [mass_b, mass_bw, mass_bth] = mass_audit(cs, &self.node_area, state);
        Ok(DiagnosticsRow {
            step,
            t: state.t,
            min,
            max,
            energy_b,
            dissipation_cum: self.dissipation_cum,
            grad_l2: Field::ALL.map(|f| asm.gradient_norm_sq(state.field(f)).sqrt()),
            mass_b,
            mass_bw,
            mass_bth,
            overshoot: linf_audit(state, &self.bounds),
            newton_iters: report.map_or(0, |r| r.newton.iterations),
            lin_iters: report.map_or([0; 3], |r| {
                [
                    r.newton.linear_iterations,
                    r.w_solve.iterations,
                    r.theta_solve.iterations,
                ]
            }),
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dissipation_series(&self) -> &[f64] {
        &self.dissipation
    }

    pub fn energy_audit(&self) -> EnergyAudit {
        energy_audit(&self.energies, &self.dissipation)
    }
}
