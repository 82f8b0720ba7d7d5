//! Conforming tensor-product finite element spaces `S^q_0` on a
//! [`TensorMesh`](crate::mesh::TensorMesh).
//!
//! Each axis carries the same subdivision and the same degree-`q` Lagrange
//! basis on Gauss–Lobatto–Legendre nodes, so the global basis is the tensor
//! product of 1D hat-like functions on the axis grid. Only interior grid
//! points carry degrees of freedom; functions vanish on `∂Ω` and are
//! extended by zero outside the box.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{locate_interval, TensorMesh};
use crate::quad::{lagrange_basis, LagrangeBasis1D, MAX_BASIS_DEGREE};

/// Stack bound for per-axis basis values (`MAX_BASIS_DEGREE + 1`).
const MAX_P: usize = MAX_BASIS_DEGREE + 1;

/// A `Q_q` space with homogeneous Dirichlet conditions on the box boundary.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<TensorMesh>,
    degree: usize,
    basis: Arc<LagrangeBasis1D>,
    /// All axis grid points `node[e] + ξ_k h_e`, including the endpoints;
    /// length `n q + 1` for `n` elements per axis.
    grid: Vec<f64>,
}

/// Assemble the axis grid and basis for a mesh/degree pair.
pub fn build_space(mesh: Arc<TensorMesh>, degree: usize) -> Result<Arc<FeSpace>> {
    if degree < 1 {
        return Err(Error::InvalidParameter("degree must be >= 1".into()));
    }
    let basis = lagrange_basis(degree)?;
    let nodes = mesh.axis_nodes();
    let n = mesh.elements_per_axis();
    let mut grid = Vec::with_capacity(n * degree + 1);
    for e in 0..n {
        let h = nodes[e + 1] - nodes[e];
        for k in 0..degree {
            grid.push(nodes[e] + basis.nodes()[k] * h);
        }
    }
    grid.push(1.0);
    Ok(Arc::new(FeSpace { mesh, degree, basis, grid }))
}

impl FeSpace {
    pub fn mesh(&self) -> &Arc<TensorMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn basis(&self) -> &Arc<LagrangeBasis1D> {
        &self.basis
    }

    /// All axis grid points, endpoints included.
    pub fn axis_grid(&self) -> &[f64] {
        &self.grid
    }

    /// Interior grid points per axis (`n q - 1`).
    pub fn interior_per_axis(&self) -> usize {
        self.mesh.elements_per_axis() * self.degree - 1
    }

    /// Global number of degrees of freedom, `(n q - 1)^d`.
    pub fn dof_count(&self) -> usize {
        self.interior_per_axis().pow(self.mesh.dim() as u32)
    }

    /// Axis grid index of local node `k` in element `e`.
    pub fn axis_grid_index(&self, e: usize, k: usize) -> usize {
        e * self.degree + k
    }

    /// Whether an axis grid index sits on the boundary of `[0,1]`.
    pub fn is_boundary_axis_index(&self, g: usize) -> bool {
        g == 0 || g == self.mesh.elements_per_axis() * self.degree
    }

    /// Local node indices of element `e` (along one axis) that carry DOFs.
    pub fn active_locals_axis(&self, e: usize) -> Vec<usize> {
        (0..=self.degree)
            .filter(|&k| !self.is_boundary_axis_index(self.axis_grid_index(e, k)))
            .collect()
    }

    /// Global DOF from per-axis grid indices; `None` on the boundary.
    /// Axis 1 varies fastest.
    pub fn global_from_axis_indices(&self, gs: &[usize]) -> Option<usize> {
        let stride = self.interior_per_axis();
        let mut flat = 0usize;
        for a in (0..self.mesh.dim()).rev() {
            if self.is_boundary_axis_index(gs[a]) {
                return None;
            }
            flat = flat * stride + (gs[a] - 1);
        }
        Some(flat)
    }

    /// Global DOF of local node `local` in element `elem`; `None` on `∂Ω`.
    pub fn local_to_global(&self, elem: &[usize], local: &[usize]) -> Option<usize> {
        let mut gs = [0usize; 3];
        for a in 0..self.mesh.dim() {
            gs[a] = self.axis_grid_index(elem[a], local[a]);
        }
        self.global_from_axis_indices(&gs[..self.mesh.dim()])
    }

    /// Per-axis grid indices of a global DOF (inverse of
    /// [`global_from_axis_indices`](Self::global_from_axis_indices)).
    pub fn dof_axis_indices(&self, mut dof: usize) -> [usize; 3] {
        let stride = self.interior_per_axis();
        let mut gs = [0usize; 3];
        for g in gs.iter_mut().take(self.mesh.dim()) {
            *g = dof % stride + 1;
            dof /= stride;
        }
        gs
    }

    /// Coordinates of a global DOF's grid point.
    pub fn dof_point(&self, dof: usize) -> [f64; 3] {
        let gs = self.dof_axis_indices(dof);
        let mut p = [0.0f64; 3];
        for a in 0..self.mesh.dim() {
            p[a] = self.grid[gs[a]];
        }
        p
    }

    /// Local coefficient block of one element in local lexicographic order
    /// (axis 1 fastest); boundary nodes contribute zeros.
    pub fn element_coeffs(&self, coeffs: &[f64], flat: usize) -> Vec<f64> {
        let d = self.mesh.dim();
        let q = self.degree;
        let elem = self.mesh.multi_index(flat);
        let locals = (q + 1).pow(d as u32);
        let mut out = vec![0.0f64; locals];
        let mut local = [0usize; 3];
        for (r, slot) in out.iter_mut().enumerate() {
            let mut rest = r;
            for l in local.iter_mut().take(d) {
                *l = rest % (q + 1);
                rest /= q + 1;
            }
            if let Some(g) = self.local_to_global(&elem[..d], &local[..d]) {
                *slot = coeffs[g];
            }
        }
        out
    }

    /// Evaluate the element-`flat` restriction at `x` (which may lie on the
    /// element's closure); does not consult neighbouring elements.
    pub fn eval_on_element(&self, coeffs: &[f64], flat: usize, x: &[f64]) -> f64 {
        let elem = self.mesh.multi_index(flat);
        self.eval_in(coeffs, &elem, x)
    }

    /// Evaluate at `x ∈ R^d`; zero outside the closed box, single-valued on
    /// element interfaces (continuity), zero on `∂Ω`.
    pub fn eval(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let d = self.mesh.dim();
        if (0..d).any(|a| !(0.0..=1.0).contains(&x[a])) {
            return 0.0;
        }
        let nodes = self.mesh.axis_nodes();
        let mut elem = [0usize; 3];
        for a in 0..d {
            elem[a] = locate_interval(nodes, x[a]);
        }
        self.eval_in(coeffs, &elem, x)
    }

    fn eval_in(&self, coeffs: &[f64], elem: &[usize], x: &[f64]) -> f64 {
        let d = self.mesh.dim();
        let q = self.degree;
        let nodes = self.mesh.axis_nodes();
        let mut vals = [[0.0f64; MAX_P]; 3];
        for a in 0..d {
            let lo = nodes[elem[a]];
            let h = nodes[elem[a] + 1] - lo;
            self.basis.eval_all((x[a] - lo) / h, &mut vals[a][..=q]);
        }
        let mut acc = 0.0;
        let locals = (q + 1).pow(d as u32);
        let mut local = [0usize; 3];
        for r in 0..locals {
            let mut rest = r;
            for l in local.iter_mut().take(d) {
                *l = rest % (q + 1);
                rest /= q + 1;
            }
            if let Some(g) = self.local_to_global(elem, &local[..d]) {
                let mut w = coeffs[g];
                for a in 0..d {
                    w *= vals[a][local[a]];
                }
                acc += w;
            }
        }
        acc
    }

    /// Gradient at `x` (zero outside the closed box). `out` must have
    /// length `dim`.
    pub fn eval_grad(&self, coeffs: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.mesh.dim();
        out[..d].fill(0.0);
        if (0..d).any(|a| !(0.0..=1.0).contains(&x[a])) {
            return;
        }
        let q = self.degree;
        let nodes = self.mesh.axis_nodes();
        let mut elem = [0usize; 3];
        let mut vals = [[0.0f64; MAX_P]; 3];
        let mut ders = [[0.0f64; MAX_P]; 3];
        let mut inv_h = [0.0f64; 3];
        for a in 0..d {
            elem[a] = locate_interval(nodes, x[a]);
            let lo = nodes[elem[a]];
            let h = nodes[elem[a] + 1] - lo;
            inv_h[a] = 1.0 / h;
            let t = (x[a] - lo) * inv_h[a];
            self.basis.eval_all(t, &mut vals[a][..=q]);
            self.basis.deriv_all(t, &mut ders[a][..=q]);
        }
        let locals = (q + 1).pow(d as u32);
        let mut local = [0usize; 3];
        for r in 0..locals {
            let mut rest = r;
            for l in local.iter_mut().take(d) {
                *l = rest % (q + 1);
                rest /= q + 1;
            }
            if let Some(g) = self.local_to_global(&elem[..d], &local[..d]) {
                let c = coeffs[g];
                for (b, o) in out.iter_mut().enumerate().take(d) {
                    let mut w = c * inv_h[b];
                    for a in 0..d {
                        w *= if a == b { ders[a][local[a]] } else { vals[a][local[a]] };
                    }
                    *o += w;
                }
            }
        }
    }
}

/// Coefficients over an [`FeSpace`], i.e. one discrete function.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dof_count() {
            return Err(Error::InvalidParameter(format!(
                "coefficient vector has length {}, space has {} DOFs",
                coeffs.len(),
                space.dof_count()
            )));
        }
        Ok(FeFunction { space, coeffs })
    }

    pub fn zero(space: Arc<FeSpace>) -> Self {
        let n = space.dof_count();
        FeFunction { space, coeffs: vec![0.0; n] }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.space.eval(&self.coeffs, x)
    }

    pub fn eval_grad(&self, x: &[f64], out: &mut [f64]) {
        self.space.eval_grad(&self.coeffs, x, out)
    }

    /// Line-based dump: `# N=<N> q=<q>` then one `dof_index value` per DOF.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# N={} q={}\n",
            self.space.dof_count(),
            self.space.degree()
        ));
        for (i, c) in self.coeffs.iter().enumerate() {
            out.push_str(&format!("{i} {c:.16e}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
