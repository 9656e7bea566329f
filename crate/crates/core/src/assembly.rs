//! P1 operators on a triangulation: coefficient-weighted stiffness, lumped
//! mass, the transport matrix of the `w a∇u·∇η` form, and Dirichlet
//! elimination.
//!
//! Coefficients are nodal fields averaged over each triangle's vertices, so
//! every element contributes a constant weight times exact P1 integrals.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{Mesh, TriangleGeometry};
use crate::sparse::{CsrPattern, SparseMatrix};

/// One value per mesh node.
pub type NodalField = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("coefficient at node {node} is not positive ({value})")]
    NonPositiveCoefficient { node: usize, value: f64 },
    #[error("nodal field has length {got}, mesh has {expected} nodes")]
    Length { got: usize, expected: usize },
    #[error("node {0} is not a Dirichlet node")]
    NotDirichlet(usize),
}

/// Mesh-level assembly cache: element geometry, the shared CSR pattern and
/// the value slot of every local (i, j) pair.
#[derive(Debug, Clone)]
pub struct Assembler<'m> {
    mesh: &'m Mesh,
    geometry: Vec<TriangleGeometry>,
    pattern: Arc<CsrPattern>,
    slots: Vec<[[usize; 3]; 3]>,
    node_area: Vec<f64>,
}

impl<'m> Assembler<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let n = mesh.node_count();
        let mut rows = vec![Vec::new(); n];
        for tri in mesh.triangles() {
            for &i in tri {
                rows[i].extend_from_slice(tri);
            }
        }
        let pattern = Arc::new(CsrPattern::from_rows(rows));
        let geometry: Vec<_> = (0..mesh.triangle_count()).map(|t| mesh.triangle_geometry(t)).collect();
        let slots = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [[0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        s[a][b] = pattern.find(tri[a], tri[b]).expect("pattern covers element pairs");
                    }
                }
                s
            })
            .collect();
        let mut node_area = vec![0.0; n];
        for (tri, g) in mesh.triangles().iter().zip(&geometry) {
            for &i in tri {
                node_area[i] += g.area / 3.0;
            }
        }
        Assembler {
            mesh,
            geometry,
            pattern,
            slots,
            node_area,
        }
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn geometry(&self) -> &[TriangleGeometry] {
        &self.geometry
    }

    /// Lumped mass with unit weight: a third of the area of every incident triangle.
    pub fn node_area(&self) -> &[f64] {
        &self.node_area
    }

    pub fn zeros(&self) -> SparseMatrix {
        SparseMatrix::zeros(self.pattern.clone())
    }

    fn check_len(&self, field: &[f64]) -> Result<(), AssemblyError> {
        if field.len() != self.mesh.node_count() {
            return Err(AssemblyError::Length {
                got: field.len(),
                expected: self.mesh.node_count(),
            });
        }
        Ok(())
    }

    fn check_positive(&self, coeff: &[f64]) -> Result<(), AssemblyError> {
        self.check_len(coeff)?;
        match coeff.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            Some(node) => Err(AssemblyError::NonPositiveCoefficient {
                node,
                value: coeff[node],
            }),
            None => Ok(()),
        }
    }

    fn element_mean(&self, t: usize, field: &[f64]) -> f64 {
        let [i, j, k] = self.mesh.triangles()[t];
        (field[i] + field[j] + field[k]) / 3.0
    }

    /// `K_ij = Σ_T c_T ∫_T ∇φ_j·∇φ_i`.
    pub fn stiffness(&self, coeff: &[f64]) -> Result<SparseMatrix, AssemblyError> {
        self.check_positive(coeff)?;
        let mut k = self.zeros();
        let values = k.values_mut();
        for (t, g) in self.geometry.iter().enumerate() {
            let w = self.element_mean(t, coeff) * g.area;
            let slots = &self.slots[t];
            for a in 0..3 {
                for b in a..3 {
                    let v = w * (g.grads[a][0] * g.grads[b][0] + g.grads[a][1] * g.grads[b][1]);
                    values[slots[a][b]] += v;
                    if a != b {
                        values[slots[b][a]] += v;
                    }
                }
            }
        }
        Ok(k)
    }

    /// Diagonal of the lumped mass matrix weighted by a nodal field.
    pub fn lumped_mass(&self, weight: &[f64]) -> Result<NodalField, AssemblyError> {
        self.check_len(weight)?;
        Ok(self.node_area.iter().zip(weight).map(|(m, w)| m * w).collect())
    }

    /// Matrix of `w ↦ ∫ w a ∇u_h·∇φ_i`. The row index carries the gradient
    /// of the test function. With `upwind`, each element edge flux
    /// `a_T S_ik (u_k − u_i)` takes `w` from its upstream endpoint.
    pub fn convection(&self, a: &[f64], u: &[f64], upwind: bool) -> Result<SparseMatrix, AssemblyError> {
        self.check_positive(a)?;
        self.check_len(u)?;
        let mut c = self.zeros();
        let values = c.values_mut();
        for (t, g) in self.geometry.iter().enumerate() {
            let tri = self.mesh.triangles()[t];
            let a_t = self.element_mean(t, a);
            let slots = &self.slots[t];
            if upwind {
                for i in 0..3 {
                    for k in 0..3 {
                        if i == k {
                            continue;
                        }
                        let s_ik = g.area * (g.grads[i][0] * g.grads[k][0] + g.grads[i][1] * g.grads[k][1]);
                        let du = u[tri[k]] - u[tri[i]];
                        let flux = a_t * s_ik * du;
                        if du > 0.0 {
                            values[slots[i][k]] += flux;
                        } else {
                            values[slots[i][i]] += flux;
                        }
                    }
                }
            } else {
                // Differences against vertex 0 make ∇u vanish exactly for constant u.
                let mut grad_u = [0.0; 2];
                for m in 1..3 {
                    let du = u[tri[m]] - u[tri[0]];
                    grad_u[0] += du * g.grads[m][0];
                    grad_u[1] += du * g.grads[m][1];
                }
                for i in 0..3 {
                    let s = a_t * (grad_u[0] * g.grads[i][0] + grad_u[1] * g.grads[i][1]) * g.area / 3.0;
                    for j in 0..3 {
                        values[slots[i][j]] += s;
                    }
                }
            }
        }
        Ok(c)
    }

    /// `‖∇v_h‖²_{L²}`.
    pub fn gradient_norm_sq(&self, v: &[f64]) -> f64 {
        self.weighted_gradient_norm_sq(None, v)
    }

    /// `Σ_T c_T |T| |∇v_h|²`, i.e. `vᵀK(c)v` summed element by element so
    /// that the result is never negative.
    pub fn weighted_gradient_norm_sq(&self, coeff: Option<&[f64]>, v: &[f64]) -> f64 {
        self.geometry
            .iter()
            .enumerate()
            .map(|(t, g)| {
                let tri = self.mesh.triangles()[t];
                let mut gx = 0.0;
                let mut gy = 0.0;
                for m in 1..3 {
                    let dv = v[tri[m]] - v[tri[0]];
                    gx += dv * g.grads[m][0];
                    gy += dv * g.grads[m][1];
                }
                let c = coeff.map_or(1.0, |c| self.element_mean(t, c));
                c * g.area * (gx * gx + gy * gy)
            })
            .sum()
    }
}

pub fn assemble_stiffness(mesh: &Mesh, coeff: &[f64]) -> Result<SparseMatrix, AssemblyError> {
    Assembler::new(mesh).stiffness(coeff)
}

pub fn assemble_lumped_mass(mesh: &Mesh, weight: &[f64]) -> Result<NodalField, AssemblyError> {
    Assembler::new(mesh).lumped_mass(weight)
}

pub fn assemble_convection(
    mesh: &Mesh,
    a: &[f64],
    u: &[f64],
    upwind: bool,
) -> Result<SparseMatrix, AssemblyError> {
    Assembler::new(mesh).convection(a, u, upwind)
}

/// Symmetric elimination of the listed nodes: their rows and columns are
/// zeroed, the diagonal set to one, and the known column contributions moved
/// to the right-hand side. `values` is indexed by node.
pub fn apply_dirichlet(
    matrix: &mut SparseMatrix,
    rhs: &mut [f64],
    mesh: &Mesh,
    nodes: &[usize],
    values: &[f64],
) -> Result<(), AssemblyError> {
    if nodes.is_empty() {
        return Ok(());
    }
    let n = matrix.dim();
    let mut fixed = vec![false; n];
    for &node in nodes {
        if node >= n || !mesh.is_dirichlet(node) {
            return Err(AssemblyError::NotDirichlet(node));
        }
        fixed[node] = true;
    }
    let pattern = matrix.pattern().clone();
    let (rp, ci) = (pattern.row_ptr(), pattern.col_idx());
    let vals = matrix.values_mut();
    for i in 0..n {
        if fixed[i] {
            for k in rp[i]..rp[i + 1] {
                vals[k] = if ci[k] == i { 1.0 } else { 0.0 };
            }
            rhs[i] = values[i];
        } else {
            for k in rp[i]..rp[i + 1] {
                let j = ci[k];
                if fixed[j] {
                    rhs[i] -= vals[k] * values[j];
                    vals[k] = 0.0;
                }
            }
        }
    }
    Ok(())
}
