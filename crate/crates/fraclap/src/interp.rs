//! Nodal interpolation onto the tensor Gauss–Lobatto–Legendre basis, both on
//! the reference cube and globally onto an [`FeSpace`](crate::space::FeSpace).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::lagrange_basis;
use crate::space::{FeFunction, FeSpace};

/// Values of `f` at the `(q+1)^d` tensor GLL nodes of `[0,1]^d`, in local
/// lexicographic order (axis 1 fastest).
pub fn interp_reference<F>(f: F, dim: usize, q: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )));
    }
    let basis = lagrange_basis(q)?;
    let nodes = basis.nodes();
    let count = (q + 1).pow(dim as u32);
    let mut values = Vec::with_capacity(count);
    let mut point = [0.0f64; 3];
    for r in 0..count {
        let mut rest = r;
        for p in point.iter_mut().take(dim) {
            *p = nodes[rest % (q + 1)];
            rest /= q + 1;
        }
        values.push(f(&point[..dim]));
    }
    Ok(values)
}

/// Evaluate a reference-cube interpolant (nodal `values` as produced by
/// [`interp_reference`]) at `x ∈ [0,1]^d`.
pub fn eval_reference(values: &[f64], dim: usize, q: usize, x: &[f64]) -> Result<f64> {
    let basis = lagrange_basis(q)?;
    if values.len() != (q + 1).pow(dim as u32) {
        return Err(Error::InvalidParameter(format!(
            "value vector has length {}, expected {}",
            values.len(),
            (q + 1).pow(dim as u32)
        )));
    }
    let mut card = vec![0.0f64; (q + 1) * dim];
    for a in 0..dim {
        basis.eval_all(x[a], &mut card[a * (q + 1)..(a + 1) * (q + 1)]);
    }
    let mut acc = 0.0;
    for (r, v) in values.iter().enumerate() {
        let mut rest = r;
        let mut w = *v;
        for a in 0..dim {
            w *= card[a * (q + 1) + rest % (q + 1)];
            rest /= q + 1;
        }
        acc += w;
    }
    Ok(acc)
}

/// Tolerance for the boundary-compatibility check in [`interp_global`].
pub const BOUNDARY_COMPAT_TOL: f64 = 1e-10;

/// Interpolate `f` onto the space by sampling all interior grid points.
///
/// The space imposes homogeneous Dirichlet data, so `f` must vanish on the
/// boundary grid points; any value exceeding `1e-10` there is an error.
pub fn interp_global<F>(f: F, space: &Arc<FeSpace>) -> Result<FeFunction>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = space.mesh().dim();
    let grid = space.axis_grid();
    let m = grid.len(); // n q + 1 points per axis
    let total = m.pow(dim as u32);
    let mut point = [0.0f64; 3];
    let mut gs = [0usize; 3];
    let mut coeffs = vec![0.0f64; space.dof_count()];
    for r in 0..total {
        let mut rest = r;
        for a in 0..dim {
            gs[a] = rest % m;
            point[a] = grid[gs[a]];
            rest /= m;
        }
        match space.global_from_axis_indices(&gs[..dim]) {
            Some(dof) => coeffs[dof] = f(&point[..dim]),
            None => {
                let v = f(&point[..dim]);
                if v.abs() > BOUNDARY_COMPAT_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "function does not vanish on the boundary: |f| = {:.3e} at {:?}",
                        v.abs(),
                        &point[..dim]
                    )));
                }
            }
        }
    }
    FeFunction::new(space.clone(), coeffs)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
