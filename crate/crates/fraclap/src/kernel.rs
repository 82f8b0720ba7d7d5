//! The fractional kernel: normalization constant, exterior weight, and the
//! singular pairwise quadrature engine.
//!
//! The bilinear form splits into an `Ω × Ω` part and an exterior mass term.
//! This module provides both ingredients:
//!
//! * [`kernel_constant`] — the normalization `C(d,s)`;
//! * [`exterior_weight`] — `κ(x) = ∫_{ℝ^d∖Ω} |x−z|^{−d−2s} dz`;
//! * [`pair_contribution`] / [`pair_entry`] — the symmetrized double
//!   integrals `∬_{K×K'} (φ_i(x)−φ_i(z))(φ_j(x)−φ_j(z)) |x−z|^{−d−2s}`
//!   over an element pair, for all basis pairs supported there.
//!
//! The pair engine works in the relative coordinate `δ = x − z`. For fixed
//! `δ` the inner integral factorizes per axis into small Lagrange product
//! matrices, so the `2d`-dimensional integral collapses to a `d`-dimensional
//! one over the `δ`-box. That box is cut at the kink locations of the
//! overlap formula and graded geometrically towards `δ = 0`; the innermost
//! cube around the singularity is mapped by Duffy pyramids with a
//! Gauss–Jacobi radial rule that integrates the `|δ|^{−d−2s}` factor
//! exactly against the remaining polynomial.

use std::f64::consts::PI;

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::mesh::TensorMesh;
use crate::quad::{gauss_rule, jacobi_rule};
use crate::space::FeSpace;

/// Points closer than this to `∂Ω` are rejected by [`exterior_weight`].
pub const BOUNDARY_EXCLUSION: f64 = 1e-14;

/// Orders `s` closer than this to `{0, 1}` are rejected.
pub const S_EXCLUSION: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Parameters and the normalization constant
// ---------------------------------------------------------------------------

/// Dimension, order, and the cached normalization constant.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub dim: usize,
    pub s: f64,
    /// `C(d,s)`, see [`kernel_constant`].
    pub constant: f64,
}

impl KernelParams {
    pub fn new(dim: usize, s: f64) -> Result<Self> {
        let constant = kernel_constant(dim, s)?;
        Ok(KernelParams { dim, s, constant })
    }
}

fn validate_dim_s(dim: usize, s: f64) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )));
    }
    if !s.is_finite() || s <= 0.0 || s >= 1.0 || s.abs() <= S_EXCLUSION || (1.0 - s).abs() <= S_EXCLUSION
    {
        return Err(Error::InvalidParameter(format!(
            "order s must lie strictly inside (0,1), got {s}"
        )));
    }
    Ok(())
}

/// Normalization constant of the integral fractional Laplacian,
/// `C(d,s) = 2^{2s} s Γ(s + d/2) / (π^{d/2} Γ(1−s))`.
pub fn kernel_constant(dim: usize, s: f64) -> Result<f64> {
    validate_dim_s(dim, s)?;
    let d = dim as f64;
    Ok(2f64.powf(2.0 * s) * s * gamma(s + 0.5 * d) / (PI.powf(0.5 * d) * gamma(1.0 - s)))
}

// ---------------------------------------------------------------------------
// Exterior weight κ
// ---------------------------------------------------------------------------

/// Adaptive Gauss quadrature: double the order until two successive rules
/// agree to `tol` (relative), bisecting the interval if doubling stalls.
fn adaptive_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let mut prev = f64::NAN;
    let mut n = 8;
    while n <= 256 {
        let rule = gauss_rule(n)?;
        let cur = rule.integrate_on(a, b, f);
        if prev.is_finite() && (cur - prev).abs() <= tol * cur.abs().max(1e-300) {
            return Ok(cur);
        }
        prev = cur;
        n *= 2;
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive rule failed to converge on [{a}, {b}]"
        )));
    }
    let mid = 0.5 * (a + b);
    Ok(adaptive_gauss(f, a, mid, tol, depth - 1)? + adaptive_gauss(f, mid, b, tol, depth - 1)?)
}

/// `∫_0^Φ cos^{2s}(φ) dφ` for `Φ ∈ [0, π/2)`.
fn cos_power_integral(two_s: f64, phi: f64, tol: f64) -> Result<f64> {
    if phi <= 0.0 {
        return Ok(0.0);
    }
    adaptive_gauss(&|t: f64| t.cos().powf(two_s), 0.0, phi, tol, 40)
}

/// The exterior weight `κ(x) = ∫_{ℝ^d∖[0,1]^d} |x−z|^{−d−2s} dz` to relative
/// tolerance `tol`.
///
/// The complement integral is reduced to the boundary-exit length:
/// `κ = (1/2s) ∫_{S^{d−1}} R(θ)^{−2s} dθ` with `R(θ)` the distance from `x`
/// to `∂Ω` along `θ`, which splits into closed-form radial antiderivatives
/// per boundary face plus low-dimensional smooth angular integrals.
pub fn exterior_weight(params: &KernelParams, x: &[f64], tol: f64) -> Result<f64> {
    let d = params.dim;
    let s = params.s;
    if x.len() < d {
        return Err(Error::InvalidParameter(format!(
            "point has {} coordinates, dimension is {d}",
            x.len()
        )));
    }
    for &c in &x[..d] {
        if !(c > BOUNDARY_EXCLUSION && c < 1.0 - BOUNDARY_EXCLUSION) {
            return Err(Error::InvalidParameter(format!(
                "point {:?} is on or within {BOUNDARY_EXCLUSION:.0e} of the boundary",
                &x[..d]
            )));
        }
    }
    let two_s = 2.0 * s;
    match d {
        1 => Ok((x[0].powf(-two_s) + (1.0 - x[0]).powf(-two_s)) / two_s),
        2 => {
            // Four edges; for an edge at perpendicular distance h with foot
            // offsets p and 1-p, rays exit at R = h / cos(φ):
            // ∫_sector R^{-2s} dφ = h^{-2s} ∫ cos^{2s} φ dφ.
            let mut acc = 0.0;
            let edges = [
                (x[1], x[0]),       // bottom
                (1.0 - x[1], x[0]), // top
                (x[0], x[1]),       // left
                (1.0 - x[0], x[1]), // right
            ];
            for &(h, p) in &edges {
                let part = cos_power_integral(two_s, (p / h).atan(), tol)?
                    + cos_power_integral(two_s, ((1.0 - p) / h).atan(), tol)?;
                acc += h.powf(-two_s) * part;
            }
            Ok(acc / two_s)
        }
        3 => {
            // Six faces; per face the solid-angle integral pulls back to the
            // face plane (dω = h/R³ dA), leaving a planar rectangle integral
            // ∫∫ (h² + u² + v²)^{-(3+2s)/2} du dv, evaluated in polar
            // coordinates with a closed-form radial part.
            let bp = (3.0 + two_s) / 2.0;
            let radial = |m: f64, h: f64| -> f64 {
                (h.powf(2.0 - 2.0 * bp) - (m * m + h * h).powf(1.0 - bp)) / (2.0 * bp - 2.0)
            };
            let mut acc = 0.0;
            let faces = [
                (x[0], x[1], x[2]),
                (1.0 - x[0], x[1], x[2]),
                (x[1], x[0], x[2]),
                (1.0 - x[1], x[0], x[2]),
                (x[2], x[0], x[1]),
                (1.0 - x[2], x[0], x[1]),
            ];
            for &(h, p, r) in &faces {
                let mut face = 0.0;
                for a in [p, 1.0 - p] {
                    for b in [r, 1.0 - r] {
                        let i1 = adaptive_gauss(
                            &|phi: f64| radial(a / phi.cos(), h),
                            0.0,
                            f64::atan2(b, a),
                            tol,
                            40,
                        )?;
                        let i2 = adaptive_gauss(
                            &|phi: f64| radial(b / phi.cos(), h),
                            0.0,
                            f64::atan2(a, b),
                            tol,
                            40,
                        )?;
                        face += i1 + i2;
                    }
                }
                acc += h * face;
            }
            Ok(acc / two_s)
        }
        _ => unreachable!("dimension validated by KernelParams"),
    }
}

// ---------------------------------------------------------------------------
// Pair classification
// ---------------------------------------------------------------------------

/// Contact type of an element pair, named by the dimension of the shared
/// boundary entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    Identical,
    /// Shared entity of dimension `d−1` (an interval in 2D, a rectangle in 3D).
    Face,
    /// Shared entity of dimension 1 in 3D.
    Edge,
    /// Shared entity of dimension 0 (a single point).
    Vertex,
    /// Closures do not intersect.
    Disjoint,
}

/// Classification plus the shared-entity geometry.
#[derive(Debug, Clone, Copy)]
pub struct PairRelation {
    pub class: PairClass,
    /// Dimension of `K̄ ∩ K̄'`; `None` when the closures are disjoint.
    pub shared_dim: Option<usize>,
    /// Euclidean distance between the closures (0 unless disjoint).
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AxisKind {
    Identical,
    Touching,
    Disjoint,
}

/// Per-axis interval pair `[a, a+h]`, `[a2, a2+h2]` with its relation.
#[derive(Debug, Clone, Copy)]
struct AxisGeom {
    a: f64,
    h: f64,
    a2: f64,
    h2: f64,
    gap: f64,
    kind: AxisKind,
}

fn axis_geometry(mesh: &TensorMesh, k1: usize, k2: usize) -> [AxisGeom; 3] {
    let m1 = mesh.multi_index(k1);
    let m2 = mesh.multi_index(k2);
    let nodes = mesh.axis_nodes();
    let mut out = [AxisGeom {
        a: 0.0,
        h: 0.0,
        a2: 0.0,
        h2: 0.0,
        gap: 0.0,
        kind: AxisKind::Identical,
    }; 3];
    for (axis, slot) in out.iter_mut().enumerate().take(mesh.dim()) {
        let (i, j) = (m1[axis], m2[axis]);
        let (kind, gap) = if i == j {
            (AxisKind::Identical, 0.0)
        } else if i.abs_diff(j) == 1 {
            (AxisKind::Touching, 0.0)
        } else {
            let lo = i.min(j);
            let hi = i.max(j);
            (AxisKind::Disjoint, nodes[hi] - nodes[lo + 1])
        };
        *slot = AxisGeom {
            a: nodes[i],
            h: nodes[i + 1] - nodes[i],
            a2: nodes[j],
            h2: nodes[j + 1] - nodes[j],
            gap,
            kind,
        };
    }
    out
}

/// Classify an ordered element pair by its per-axis interval relations;
/// symmetric under exchanging the pair.
pub fn classify_pair(mesh: &TensorMesh, k1: usize, k2: usize) -> PairRelation {
    let d = mesh.dim();
    let geo = axis_geometry(mesh, k1, k2);
    let mut touching = 0usize;
    let mut gap2 = 0.0f64;
    let mut disjoint = false;
    for g in geo.iter().take(d) {
        match g.kind {
            AxisKind::Identical => {}
            AxisKind::Touching => touching += 1,
            AxisKind::Disjoint => {
                disjoint = true;
                gap2 += g.gap * g.gap;
            }
        }
    }
    if disjoint {
        return PairRelation {
            class: PairClass::Disjoint,
            shared_dim: None,
            distance: gap2.sqrt(),
        };
    }
    let shared = d - touching;
    let class = if touching == 0 {
        PairClass::Identical
    } else if shared == 0 {
        PairClass::Vertex
    } else if shared == d - 1 {
        PairClass::Face
    } else {
        PairClass::Edge
    };
    PairRelation {
        class,
        shared_dim: Some(shared),
        distance: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Quadrature orders
// ---------------------------------------------------------------------------

/// Per-coordinate Gauss orders for the pair engine: `n_near` on cells close
/// to the singularity (and in the Duffy pyramids), `n_far` elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct QuadOrders {
    pub n_near: usize,
    pub n_far: usize,
}

impl QuadOrders {
    /// Defaults tied to the polynomial degree: `n_near = q+6`, `n_far = q+3`.
    pub fn default_for_degree(q: usize) -> Self {
        QuadOrders { n_near: q + 6, n_far: q + 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_near < 1 || self.n_far < 1 {
            return Err(Error::InvalidParameter(format!(
                "quadrature orders must be >= 1, got near={}, far={}",
                self.n_near, self.n_far
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Kernel power helper
// ---------------------------------------------------------------------------

/// Evaluates `r2 ↦ r2^{−(d+2s)/2}`, using root/integer-power shortcuts when
/// `d + 2s` is a multiple of 1/2 (covers the common s ∈ {1/4, 1/2, 3/4}).
#[derive(Debug, Clone, Copy)]
enum KernelPow {
    /// `sqrt(r2)^{-m}` for integer `m = d + 2s`.
    HalfPow(i32),
    /// `r2^{1/4 · (-m)}` for integer `m = 2(d + 2s)`.
    QuarterPow(i32),
    /// General `r2^{-β}`.
    General(f64),
}

impl KernelPow {
    fn new(dim: usize, s: f64) -> Self {
        let exponent = dim as f64 + 2.0 * s;
        if (exponent - exponent.round()).abs() < 1e-14 {
            KernelPow::HalfPow(exponent.round() as i32)
        } else if (2.0 * exponent - (2.0 * exponent).round()).abs() < 1e-14 {
            KernelPow::QuarterPow((2.0 * exponent).round() as i32)
        } else {
            KernelPow::General(0.5 * exponent)
        }
    }

    #[inline]
    fn eval(&self, r2: f64) -> f64 {
        match *self {
            KernelPow::HalfPow(m) => r2.sqrt().powi(-m),
            KernelPow::QuarterPow(m) => r2.sqrt().sqrt().powi(-m),
            KernelPow::General(beta) => r2.powf(-beta),
        }
    }
}

// ---------------------------------------------------------------------------
// δ-panel machinery
// ---------------------------------------------------------------------------

/// One per-axis interval of |δ| values with its sign; `innermost` marks the
/// `[0, ε]` pieces that tensor into Duffy cubes.
#[derive(Debug, Clone, Copy)]
struct Piece {
    sign: f64,
    lo: f64,
    hi: f64,
    innermost: bool,
}

/// Dyadically split `[lo, hi]` towards 0 until each piece is no wider than
/// its distance to 0 (or `floor`).
fn grade_into(out: &mut Vec<Piece>, sign: f64, lo: f64, hi: f64, floor: f64) {
    if hi <= lo {
        return;
    }
    if hi - lo <= lo.max(floor) {
        out.push(Piece { sign, lo, hi, innermost: false });
        return;
    }
    let mid = 0.5 * (lo + hi);
    grade_into(out, sign, lo, mid, floor);
    // The outer half is automatically balanced: its width is (hi-lo)/2 <= mid.
    out.push(Piece { sign, lo: mid, hi, innermost: false });
}

/// Per-axis pieces of the δ-range `[a-a2-h2, a+h-a2]`, split at the kinks of
/// the overlap formula (`a-a2`, `a+h-a2-h2`, `0`), graded towards 0, with the
/// `[0, ε]` head reserved for the Duffy treatment when `eps` is given.
fn axis_pieces(g: &AxisGeom, eps: Option<f64>, floor: f64) -> Vec<Piece> {
    let dmin = g.a - g.a2 - g.h2;
    let dmax = g.a + g.h - g.a2;
    let mut breaks = vec![dmin, dmax];
    for c in [g.a - g.a2, g.a + g.h - g.a2 - g.h2, 0.0] {
        if c > dmin && c < dmax {
            breaks.push(c);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut pieces = Vec::new();
    for w in breaks.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        // Each window lies entirely on one side of 0 because 0 is a break.
        let (sign, lo, hi) = if v <= 0.0 { (-1.0, -v, -u) } else { (1.0, u, v) };
        if lo == 0.0 {
            if let Some(e) = eps {
                pieces.push(Piece { sign, lo: 0.0, hi: e, innermost: true });
                grade_into(&mut pieces, sign, e, hi, floor);
                continue;
            }
        }
        grade_into(&mut pieces, sign, lo, hi, floor);
    }
    pieces
}

// ---------------------------------------------------------------------------
// Pair contribution
// ---------------------------------------------------------------------------

/// Union-of-supports local matrix of one element pair.
///
/// `globals` lists the degrees of freedom active on `K ∪ K'` in increasing
/// order; `matrix` is the dense symmetric `u × u` block (row-major) of
/// `∬_{K×K'} (φ_i(x)−φ_i(z))(φ_j(x)−φ_j(z)) |x−z|^{−d−2s} dz dx`.
#[derive(Debug, Clone)]
pub struct PairContribution {
    pub globals: Vec<usize>,
    pub matrix: Vec<f64>,
}

impl PairContribution {
    pub fn size(&self) -> usize {
        self.globals.len()
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.matrix[r * self.globals.len() + c]
    }
}

/// One union row: global DOF plus its local multi-index on each element
/// (when supported there).
struct UnionRow {
    global: usize,
    loc1: Option<[usize; 3]>,
    loc2: Option<[usize; 3]>,
}

/// Active local multi-indices of an element with their globals, in local
/// lexicographic order.
fn active_locals(space: &FeSpace, flat: usize) -> Vec<([usize; 3], usize)> {
    let d = space.mesh().dim();
    let elem = space.mesh().multi_index(flat);
    let per_axis: Vec<Vec<usize>> = (0..d)
        .map(|a| space.active_locals_axis(elem[a]))
        .collect();
    let mut out = Vec::new();
    let counts: Vec<usize> = per_axis.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    for r in 0..total {
        let mut rest = r;
        let mut local = [0usize; 3];
        for a in 0..d {
            local[a] = per_axis[a][rest % counts[a]];
            rest /= counts[a];
        }
        let g = space
            .local_to_global(&elem[..d], &local[..d])
            .expect("active locals are interior");
        out.push((local, g));
    }
    out
}

/// Reusable buffers for one pair evaluation.
struct Workspace {
    /// Per axis, per δ-node: the three `(q+1)²` product matrices, packed as
    /// `[node * 3*m2 ..]` with U, V, W consecutive.
    axis_mats: [Vec<f64>; 3],
    axis_delta: [Vec<f64>; 3],
    axis_wt: [Vec<f64>; 3],
    /// Kernel × weight tensor over δ-nodes, axis 1 fastest.
    coef: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    /// Factorized block tensors, entry layout `α1 + m2 α2 + m2² α3` with
    /// `α = p (q+1) + r`.
    block_uu: Vec<f64>,
    block_uv: Vec<f64>,
    block_ww: Vec<f64>,
    /// Per singular node: U, V, W for each axis (packed like axis_mats).
    point_mats: [Vec<f64>; 3],
    /// Products of the per-axis matrices at one singular node.
    prod_uu: Vec<f64>,
    prod_uv: Vec<f64>,
    prod_ww: Vec<f64>,
}

impl Workspace {
    fn new(d: usize, q: usize, max_n: usize) -> Self {
        let m2 = (q + 1) * (q + 1);
        let blocks = m2.pow(d as u32);
        let nd = max_n.pow(d as u32);
        Workspace {
            axis_mats: std::array::from_fn(|_| vec![0.0; max_n * 3 * m2]),
            axis_delta: std::array::from_fn(|_| vec![0.0; max_n]),
            axis_wt: std::array::from_fn(|_| vec![0.0; max_n]),
            coef: vec![0.0; nd],
            t1: vec![0.0; max_n * max_n * m2],
            t2: vec![0.0; max_n * m2 * m2],
            block_uu: vec![0.0; blocks],
            block_uv: vec![0.0; blocks],
            block_ww: vec![0.0; blocks],
            point_mats: std::array::from_fn(|_| vec![0.0; 3 * m2]),
            prod_uu: vec![0.0; blocks],
            prod_uv: vec![0.0; blocks],
            prod_ww: vec![0.0; blocks],
        }
    }
}

/// Fill the three per-axis Lagrange product matrices at relative offset
/// `delta`: `U[p,r] = ∫ ℓ_p^K ℓ_r^K`, `V[p,r] = ∫ ℓ_p^K(x) ℓ_r^{K'}(x−δ)`,
/// `W[p,r] = ∫ ℓ_p^{K'} ℓ_r^{K'}`, over the x-overlap of `K` and `K'+δ`.
/// `out` holds U, V, W consecutively, each `(q+1)²` row-major.
fn fill_axis_matrices(
    out: &mut [f64],
    geom: &AxisGeom,
    delta: f64,
    space: &FeSpace,
) -> Result<()> {
    let q = space.degree();
    let p1 = q + 1;
    let m2 = p1 * p1;
    out[..3 * m2].fill(0.0);
    let lo = geom.a.max(geom.a2 + delta);
    let hi = (geom.a + geom.h).min(geom.a2 + geom.h2 + delta);
    if hi <= lo {
        return Ok(());
    }
    let w = hi - lo;
    let rule = gauss_rule(q + 1)?;
    let basis = space.basis();
    let mut b1 = [0.0f64; crate::quad::MAX_BASIS_DEGREE + 1];
    let mut b2 = [0.0f64; crate::quad::MAX_BASIS_DEGREE + 1];
    for g in 0..rule.len() {
        let x = lo + rule.points[g] * w;
        let wg = rule.weights[g] * w;
        basis.eval_all((x - geom.a) / geom.h, &mut b1[..p1]);
        basis.eval_all((x - delta - geom.a2) / geom.h2, &mut b2[..p1]);
        for p in 0..p1 {
            let wp1 = wg * b1[p];
            let wp2 = wg * b2[p];
            for r in p..p1 {
                out[p * p1 + r] += wp1 * b1[r];
                out[2 * m2 + p * p1 + r] += wp2 * b2[r];
            }
            for r in 0..p1 {
                out[m2 + p * p1 + r] += wp1 * b2[r];
            }
        }
    }
    // Mirror the symmetric U and W blocks so products are bitwise symmetric.
    for p in 0..p1 {
        for r in 0..p {
            out[p * p1 + r] = out[r * p1 + p];
            out[2 * m2 + p * p1 + r] = out[2 * m2 + r * p1 + p];
        }
    }
    Ok(())
}

/// Contract the per-node coefficient tensor against one per-axis matrix
/// family (offset selects U, V or W inside the packed per-node blocks) and
/// add the result into `out` (layout `α1 + m2 α2 + …`).
#[allow(clippy::too_many_arguments)]
fn contract_axis_mats(
    d: usize,
    n: usize,
    m2: usize,
    offset: usize,
    ws_axis: &[Vec<f64>; 3],
    coef: &[f64],
    t1: &mut [f64],
    t2: &mut [f64],
    out: &mut [f64],
) {
    let stride = 3 * m2;
    let mat = |axis: usize, node: usize| -> &[f64] {
        &ws_axis[axis][node * stride + offset..node * stride + offset + m2]
    };
    match d {
        1 => {
            for i in 0..n {
                let c = coef[i];
                let m = mat(0, i);
                for (o, &v) in out.iter_mut().zip(m) {
                    *o += c * v;
                }
            }
        }
        2 => {
            let t1 = &mut t1[..n * m2];
            t1.fill(0.0);
            for j in 0..n {
                for i in 0..n {
                    let c = coef[j * n + i];
                    let m = mat(0, i);
                    let row = &mut t1[j * m2..(j + 1) * m2];
                    for (o, &v) in row.iter_mut().zip(m) {
                        *o += c * v;
                    }
                }
            }
            for j in 0..n {
                let m = mat(1, j);
                for a2 in 0..m2 {
                    let w = m[a2];
                    let row = &t1[j * m2..(j + 1) * m2];
                    let orow = &mut out[a2 * m2..(a2 + 1) * m2];
                    for (o, &v) in orow.iter_mut().zip(row) {
                        *o += w * v;
                    }
                }
            }
        }
        3 => {
            let t1 = &mut t1[..n * n * m2];
            t1.fill(0.0);
            for k in 0..n {
                for j in 0..n {
                    let base = (k * n + j) * m2;
                    for i in 0..n {
                        let c = coef[(k * n + j) * n + i];
                        let m = mat(0, i);
                        let row = &mut t1[base..base + m2];
                        for (o, &v) in row.iter_mut().zip(m) {
                            *o += c * v;
                        }
                    }
                }
            }
            let t2 = &mut t2[..n * m2 * m2];
            t2.fill(0.0);
            for k in 0..n {
                for j in 0..n {
                    let m = mat(1, j);
                    let row = &t1[(k * n + j) * m2..(k * n + j + 1) * m2];
                    for a2 in 0..m2 {
                        let w = m[a2];
                        let orow = &mut t2[(k * m2 + a2) * m2..(k * m2 + a2 + 1) * m2];
                        for (o, &v) in orow.iter_mut().zip(row) {
                            *o += w * v;
                        }
                    }
                }
            }
            for k in 0..n {
                let m = mat(2, k);
                for a3 in 0..m2 {
                    let w = m[a3];
                    for a2 in 0..m2 {
                        let row = &t2[(k * m2 + a2) * m2..(k * m2 + a2 + 1) * m2];
                        let orow = &mut out[(a3 * m2 + a2) * m2..(a3 * m2 + a2 + 1) * m2];
                        for (o, &v) in orow.iter_mut().zip(row) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Per-pair engine state.
struct PairEngine<'a> {
    space: &'a FeSpace,
    geo: [AxisGeom; 3],
    d: usize,
    q: usize,
    m2: usize,
    kernel_pow: KernelPow,
    s: f64,
    orders: QuadOrders,
    rows: Vec<UnionRow>,
    /// Map (row, row) -> singular accumulator, row-major upper triangle
    /// stored in a full u×u buffer.
    singular: Vec<f64>,
    ws: Workspace,
}

impl<'a> PairEngine<'a> {
    /// Evaluate one regular (non-singular) δ-cell into the block tensors.
    fn regular_cell(&mut self, pieces: &[Piece]) -> Result<()> {
        let d = self.d;
        // Distance-based order choice: cells within two diameters of the
        // singularity get the near order.
        let dist2: f64 = pieces.iter().map(|p| p.lo * p.lo).sum();
        let diam2: f64 = pieces.iter().map(|p| (p.hi - p.lo) * (p.hi - p.lo)).sum();
        let n = if dist2 <= 4.0 * diam2 {
            self.orders.n_near
        } else {
            self.orders.n_far
        };
        let rule = gauss_rule(n)?;
        for a in 0..d {
            let width = pieces[a].hi - pieces[a].lo;
            for i in 0..n {
                let dv = pieces[a].sign * (pieces[a].lo + rule.points[i] * width);
                self.ws.axis_delta[a][i] = dv;
                self.ws.axis_wt[a][i] = rule.weights[i] * width;
                let m2 = self.m2;
                let mats = &mut self.ws.axis_mats[a][i * 3 * m2..(i + 1) * 3 * m2];
                fill_axis_matrices(mats, &self.geo[a], dv, self.space)?;
            }
        }
        // Kernel × weight tensor.
        let nd = n.pow(d as u32);
        for idx in 0..nd {
            let mut rest = idx;
            let mut r2 = 0.0;
            let mut w = 1.0;
            for a in 0..d {
                let i = rest % n;
                rest /= n;
                let dv = self.ws.axis_delta[a][i];
                r2 += dv * dv;
                w *= self.ws.axis_wt[a][i];
            }
            self.ws.coef[idx] = w * self.kernel_pow.eval(r2);
        }
        for (offset, block) in [
            (0, &mut self.ws.block_uu),
            (self.m2, &mut self.ws.block_uv),
            (2 * self.m2, &mut self.ws.block_ww),
        ] {
            contract_axis_mats(
                d,
                n,
                self.m2,
                offset,
                &self.ws.axis_mats,
                &self.ws.coef[..nd],
                &mut self.ws.t1,
                &mut self.ws.t2,
                block,
            );
        }
        Ok(())
    }

    /// Evaluate one singular Duffy cube `∏_a σ_a [0, ε]` directly into the
    /// union accumulator. The three separated blocks diverge individually
    /// near `δ = 0`; only their symmetrized combination is integrable, so
    /// this cell accumulates the combined matrix.
    fn singular_cell(&mut self, signs: &[f64], eps: f64) -> Result<()> {
        let d = self.d;
        let q = self.q;
        let m2 = self.m2;
        let p1 = q + 1;
        let s = self.s;
        let n_ang = self.orders.n_near;
        // The radial factor ξ^{1−2s} is integrated exactly against the
        // remaining polynomial (degree ≤ d(2q+1) − 2 inside the kink-free
        // cube) by a Gauss–Jacobi rule of sufficient order.
        let needed = d * (2 * q + 1) / 2 + 1;
        let n_rad = self.orders.n_near.max(needed);
        let radial = jacobi_rule(n_rad, 1.0 - 2.0 * s)?;
        let angular = gauss_rule(n_ang)?;
        let beta = 0.5 * (d as f64 + 2.0 * s);
        let pref = eps.powf(-2.0 * s);
        let u = self.rows.len();
        let ang_count = n_ang.pow((d - 1) as u32);
        let mut eta = [1.0f64; 3];
        for pyramid in 0..d {
            for ang in 0..ang_count {
                let mut rest = ang;
                let mut w_ang = 1.0;
                let mut qv = 1.0;
                for a in 0..d {
                    if a == pyramid {
                        eta[a] = 1.0;
                        continue;
                    }
                    let i = rest % n_ang;
                    rest /= n_ang;
                    eta[a] = angular.points[i];
                    w_ang *= angular.weights[i];
                    qv += eta[a] * eta[a];
                }
                let w_outer = pref * w_ang * qv.powf(-beta);
                for ir in 0..radial.len() {
                    let xi = radial.points[ir];
                    let w_all = w_outer * radial.weights[ir] / (xi * xi);
                    for a in 0..d {
                        let dv = signs[a] * eps * xi * eta[a];
                        let mats = &mut self.ws.point_mats[a][..3 * m2];
                        fill_axis_matrices(mats, &self.geo[a], dv, self.space)?;
                    }
                    // Tensor products of the per-axis matrices.
                    let blocks = m2.pow(d as u32);
                    for idx in 0..blocks {
                        let mut rest = idx;
                        let mut uu = 1.0;
                        let mut uv = 1.0;
                        let mut ww = 1.0;
                        for a in 0..d {
                            let al = rest % m2;
                            rest /= m2;
                            let mats = &self.ws.point_mats[a];
                            uu *= mats[al];
                            uv *= mats[m2 + al];
                            ww *= mats[2 * m2 + al];
                        }
                        self.ws.prod_uu[idx] = uu;
                        self.ws.prod_uv[idx] = uv;
                        self.ws.prod_ww[idx] = ww;
                    }
                    // Combine into the union matrix (upper triangle).
                    for r in 0..u {
                        for c in r..u {
                            let mut val = 0.0;
                            let (l1r, l2r) = (self.rows[r].loc1, self.rows[r].loc2);
                            let (l1c, l2c) = (self.rows[c].loc1, self.rows[c].loc2);
                            if let (Some(ar), Some(ac)) = (l1r, l1c) {
                                val += self.ws.prod_uu[block_index(d, p1, &ar, &ac)];
                            }
                            if let (Some(ar), Some(bc)) = (l1r, l2c) {
                                val -= self.ws.prod_uv[block_index(d, p1, &ar, &bc)];
                            }
                            if let (Some(ac), Some(br)) = (l1c, l2r) {
                                val -= self.ws.prod_uv[block_index(d, p1, &ac, &br)];
                            }
                            if let (Some(br), Some(bc)) = (l2r, l2c) {
                                val += self.ws.prod_ww[block_index(d, p1, &br, &bc)];
                            }
                            self.singular[r * u + c] += w_all * val;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Entry index into a factorized block tensor for local multis `a` (rows of
/// the per-axis matrices) and `b` (columns): `α_axis = a_axis (q+1) + b_axis`,
/// flattened axis 1 fastest.
#[inline]
fn block_index(d: usize, p1: usize, a: &[usize; 3], b: &[usize; 3]) -> usize {
    let m2 = p1 * p1;
    let mut idx = 0usize;
    for axis in (0..d).rev() {
        idx = idx * m2 + (a[axis] * p1 + b[axis]);
    }
    idx
}

/// Compute the union-of-supports pair matrix for elements `k1`, `k2`.
///
/// The result is exactly symmetric and bit-reproducible: the cell
/// decomposition, the quadrature rules, and all accumulation orders are
/// deterministic functions of the inputs.
pub fn pair_contribution(
    space: &FeSpace,
    params: &KernelParams,
    k1: usize,
    k2: usize,
    orders: &QuadOrders,
) -> Result<PairContribution> {
    orders.validate()?;
    let mesh = space.mesh();
    let d = mesh.dim();
    if params.dim != d {
        return Err(Error::InvalidParameter(format!(
            "kernel dimension {} does not match mesh dimension {d}",
            params.dim
        )));
    }
    let q = space.degree();
    let geo = axis_geometry(mesh, k1, k2);

    // Union rows, sorted by global index.
    let act1 = active_locals(space, k1);
    let act2 = active_locals(space, k2);
    let mut by_global: std::collections::BTreeMap<usize, (Option<[usize; 3]>, Option<[usize; 3]>)> =
        std::collections::BTreeMap::new();
    for (loc, g) in &act1 {
        by_global.entry(*g).or_default().0 = Some(*loc);
    }
    for (loc, g) in &act2 {
        by_global.entry(*g).or_default().1 = Some(*loc);
    }
    let rows: Vec<UnionRow> = by_global
        .into_iter()
        .map(|(global, (loc1, loc2))| UnionRow { global, loc1, loc2 })
        .collect();
    let u = rows.len();
    if u == 0 {
        return Ok(PairContribution { globals: vec![], matrix: vec![] });
    }

    // Singularity structure: touching/identical pairs get an isotropic Duffy
    // cube of half-width ε; disjoint pairs grade down to the closure gap.
    let mut disjoint = false;
    let mut gap2 = 0.0;
    let mut eps = f64::INFINITY;
    for g in geo.iter().take(d) {
        match g.kind {
            AxisKind::Identical => eps = eps.min(g.h),
            AxisKind::Touching => eps = eps.min(g.h.min(g.h2)),
            AxisKind::Disjoint => {
                disjoint = true;
                gap2 += g.gap * g.gap;
            }
        }
    }
    let (eps_opt, floor) = if disjoint {
        (None, gap2.sqrt())
    } else {
        (Some(eps), eps)
    };

    let pieces: Vec<Vec<Piece>> = (0..d)
        .map(|a| axis_pieces(&geo[a], eps_opt, floor))
        .collect();

    let max_n = orders
        .n_near
        .max(orders.n_far)
        .max(d * (2 * q + 1) / 2 + 1);
    let mut engine = PairEngine {
        space,
        geo,
        d,
        q,
        m2: (q + 1) * (q + 1),
        kernel_pow: KernelPow::new(d, params.s),
        s: params.s,
        orders: *orders,
        rows,
        singular: vec![0.0; u * u],
        ws: Workspace::new(d, q, max_n),
    };

    // Enumerate all δ-cells (tensor products of per-axis pieces) in a fixed
    // lexicographic order.
    let counts: Vec<usize> = pieces.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    let mut cell = [Piece { sign: 1.0, lo: 0.0, hi: 1.0, innermost: false }; 3];
    for flat in 0..total {
        let mut rest = flat;
        let mut all_inner = true;
        for a in 0..d {
            cell[a] = pieces[a][rest % counts[a]];
            rest /= counts[a];
            all_inner &= cell[a].innermost;
        }
        if all_inner {
            let signs: Vec<f64> = (0..d).map(|a| cell[a].sign).collect();
            let eps = cell[0].hi;
            engine.singular_cell(&signs, eps)?;
        } else {
            engine.regular_cell(&cell[..d])?;
        }
    }

    // Combine the factorized blocks with the singular accumulator into the
    // final symmetric matrix (upper triangle first, then mirrored).
    let p1 = q + 1;
    let mut matrix = vec![0.0f64; u * u];
    for r in 0..u {
        for c in r..u {
            let mut val = engine.singular[r * u + c];
            let (l1r, l2r) = (engine.rows[r].loc1, engine.rows[r].loc2);
            let (l1c, l2c) = (engine.rows[c].loc1, engine.rows[c].loc2);
            if let (Some(ar), Some(ac)) = (l1r, l1c) {
                val += engine.ws.block_uu[block_index(d, p1, &ar, &ac)];
            }
            if let (Some(ar), Some(bc)) = (l1r, l2c) {
                val -= engine.ws.block_uv[block_index(d, p1, &ar, &bc)];
            }
            if let (Some(ac), Some(br)) = (l1c, l2r) {
                val -= engine.ws.block_uv[block_index(d, p1, &ac, &br)];
            }
            if let (Some(br), Some(bc)) = (l2r, l2c) {
                val += engine.ws.block_ww[block_index(d, p1, &br, &bc)];
            }
            matrix[r * u + c] = val;
            matrix[c * u + r] = val;
        }
    }
    let globals = engine.rows.iter().map(|r| r.global).collect();
    Ok(PairContribution { globals, matrix })
}

/// Single entry of the pair matrix for global basis indices `i`, `j`;
/// zero when either function has no support on `K ∪ K'`.
pub fn pair_entry(
    space: &FeSpace,
    params: &KernelParams,
    k1: usize,
    k2: usize,
    i: usize,
    j: usize,
    orders: &QuadOrders,
) -> Result<f64> {
    let contrib = pair_contribution(space, params, k1, k2, orders)?;
    let pi = contrib.globals.binary_search(&i);
    let pj = contrib.globals.binary_search(&j);
    match (pi, pj) {
        (Ok(r), Ok(c)) => Ok(contrib.entry(r, c)),
        _ => Ok(0.0),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_tensor_mesh, custom_nodes, geometric_nodes_1d, MeshVariant};
    use crate::space::build_space;
    use std::sync::Arc;

    fn space_on(nodes: Vec<f64>, dim: usize, q: usize) -> Arc<FeSpace> {
        let mesh = Arc::new(build_tensor_mesh(custom_nodes(nodes).unwrap(), dim).unwrap());
        build_space(mesh, q).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(KernelParams::new(0, 0.5).is_err());
        assert!(KernelParams::new(4, 0.5).is_err());
        assert!(KernelParams::new(1, 0.0).is_err());
        assert!(KernelParams::new(1, 1.0).is_err());
        assert!(KernelParams::new(1, -0.1).is_err());
        assert!(KernelParams::new(1, 1.0 - 1e-13).is_err());
        assert!(KernelParams::new(1, 5e-13).is_err());
        assert!(KernelParams::new(2, f64::NAN).is_err());
        assert!(KernelParams::new(3, 0.5).is_ok());
    }

    #[test]
    fn kernel_constant_frozen_values() {
        // (dim, s, C(d,s)); reference values computed at 40-digit precision.
        let table = [
            (1, 0.25, 0.19947114020071633897),
            (1, 0.5, 0.31830988618379067154),
            (1, 0.75, 0.29920671030107450845),
            (2, 0.25, 0.083241983875425065489),
            (2, 0.5, 0.15915494309189533577),
            (2, 0.75, 0.17116712969055234293),
            (3, 0.25, 0.047620226950680727339),
            (3, 0.5, 0.10132118364233777144),
            (3, 0.75, 0.11905056737670181835),
        ];
        for &(d, s, want) in &table {
            let got = kernel_constant(d, s).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * want,
                "C({d},{s}) = {got}, want {want}"
            );
        }
        // d=1, s=1/2 is the classical half-Laplacian constant 1/π.
        let half = kernel_constant(1, 0.5).unwrap();
        assert!((half - 1.0 / PI).abs() <= 1e-15);
    }

    #[test]
    fn kernel_constant_reflection_route_agrees() {
        // Γ(1−s) = −s Γ(−s) turns the constant into the equivalent form
        // −2^{2s} Γ(s + d/2) / (π^{d/2} Γ(−s)).
        for &s in &[0.25, 0.4, 0.5, 0.75] {
            let via_reflection =
                -(2f64.powf(2.0 * s)) * gamma(s + 1.5) / (PI.powf(1.5) * gamma(-s));
            let direct = kernel_constant(3, s).unwrap();
            assert!(
                (via_reflection - direct).abs() <= 1e-12 * direct.abs(),
                "s={s}: {via_reflection} vs {direct}"
            );
        }
        // Log-gamma and gamma agree where both apply.
        for &x in &[0.25, 0.75, 1.25, 2.5, 3.75] {
            let a = gamma(x);
            let b = ln_gamma(x).exp();
            assert!((a - b).abs() <= 1e-13 * a.abs());
        }
    }

    #[test]
    fn exterior_weight_1d_closed_forms() {
        let p = KernelParams::new(1, 0.5).unwrap();
        assert!((exterior_weight(&p, &[0.5], 1e-12).unwrap() - 4.0).abs() <= 1e-14);
        let p = KernelParams::new(1, 0.25).unwrap();
        let got = exterior_weight(&p, &[0.25], 1e-12).unwrap();
        let want = 2.0 * (2.0 + 2.0 / 3f64.sqrt());
        assert!((got - want).abs() <= 1e-13 * want);
        assert!((got - 6.30940107675850305803).abs() <= 1e-12 * got);
    }

    #[test]
    fn exterior_weight_2d_3d_frozen_values() {
        // Reference values from a 40-digit evaluation cross-checked against
        // a truncated-complement polar oracle.
        let cases: [(usize, f64, [f64; 3], f64); 5] = [
            (2, 0.25, [0.5, 0.5, 0.0], 16.841656158613640468),
            (2, 0.6, [0.3, 0.7, 0.0], 13.911445216801065232),
            (2, 0.5, [0.25, 0.5, 0.0], 13.751673610617811176),
            (3, 0.25, [0.5, 0.5, 0.5], 32.344728337709178684),
            (3, 0.5, [0.3, 0.4, 0.6], 23.668785986914070916),
        ];
        for &(d, s, x, want) in &cases {
            let p = KernelParams::new(d, s).unwrap();
            let got = exterior_weight(&p, &x[..d], 1e-13).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * want,
                "kappa_{d}d({x:?}, s={s}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn exterior_weight_symmetry_and_monotonicity() {
        let p = KernelParams::new(2, 0.5).unwrap();
        let a = exterior_weight(&p, &[0.3, 0.4], 1e-13).unwrap();
        for m in [
            [0.7, 0.4],
            [0.3, 0.6],
            [0.4, 0.3],
            [0.7, 0.6],
        ] {
            let b = exterior_weight(&p, &m, 1e-13).unwrap();
            assert!((a - b).abs() <= 1e-12 * a, "mirror {m:?}: {b} vs {a}");
        }
        // κ grows towards the boundary.
        let mut last = 0.0;
        for &x in &[0.5, 0.3, 0.1, 0.03, 0.01] {
            let v = exterior_weight(&p, &[x, 0.5], 1e-12).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn exterior_weight_rejects_boundary_points() {
        let p = KernelParams::new(2, 0.5).unwrap();
        assert!(exterior_weight(&p, &[1e-15, 0.5], 1e-12).is_err());
        assert!(exterior_weight(&p, &[0.5, 1.0 - 1e-16], 1e-12).is_err());
        assert!(exterior_weight(&p, &[-0.2, 0.5], 1e-12).is_err());
        assert!(exterior_weight(&p, &[0.5, 1.3], 1e-12).is_err());
    }

    #[test]
    fn classify_pair_examples() {
        // 1D: identical, neighbors (vertex), separated.
        let mesh1 = build_tensor_mesh(custom_nodes(vec![0.0, 0.25, 0.5, 1.0]).unwrap(), 1).unwrap();
        assert_eq!(classify_pair(&mesh1, 1, 1).class, PairClass::Identical);
        assert_eq!(classify_pair(&mesh1, 0, 1).class, PairClass::Vertex);
        let rel = classify_pair(&mesh1, 0, 2);
        assert_eq!(rel.class, PairClass::Disjoint);
        assert!((rel.distance - 0.25).abs() <= 1e-15);
        assert_eq!(rel.shared_dim, None);

        // 2D: edge neighbors share a face (dimension 1), diagonal neighbors
        // share a vertex.
        let g = geometric_nodes_1d(0.5, 1, MeshVariant::Figure).unwrap();
        let mesh2 = build_tensor_mesh(g.clone(), 2).unwrap();
        let right = mesh2.flat_index(&[1, 0]);
        let diag = mesh2.flat_index(&[1, 1]);
        assert_eq!(classify_pair(&mesh2, 0, right).class, PairClass::Face);
        assert_eq!(classify_pair(&mesh2, 0, right).shared_dim, Some(1));
        assert_eq!(classify_pair(&mesh2, 0, diag).class, PairClass::Vertex);

        // 3D: face, edge, vertex.
        let mesh3 = build_tensor_mesh(g, 3).unwrap();
        let f = mesh3.flat_index(&[1, 0, 0]);
        let e = mesh3.flat_index(&[1, 1, 0]);
        let v = mesh3.flat_index(&[1, 1, 1]);
        assert_eq!(classify_pair(&mesh3, 0, f).class, PairClass::Face);
        assert_eq!(classify_pair(&mesh3, 0, f).shared_dim, Some(2));
        assert_eq!(classify_pair(&mesh3, 0, e).class, PairClass::Edge);
        assert_eq!(classify_pair(&mesh3, 0, e).shared_dim, Some(1));
        assert_eq!(classify_pair(&mesh3, 0, v).class, PairClass::Vertex);
        assert_eq!(classify_pair(&mesh3, 0, v).shared_dim, Some(0));
        // Symmetry of the classification.
        assert_eq!(classify_pair(&mesh3, f, 0).class, PairClass::Face);
    }

    #[test]
    fn bubble_entry_closed_forms() {
        // Single element, q=2: the only interior function is 4x(1-x), and
        // ∬ (φ(x)-φ(z))² |x-z|^{-1-2s} has a closed form.
        let cases = [
            (0.25, 1024.0 / 945.0),
            (0.5, 8.0 / 3.0),
            (0.75, 1024.0 / 105.0),
        ];
        for &(s, want) in &cases {
            let space = space_on(vec![0.0, 1.0], 1, 2);
            let params = KernelParams::new(1, s).unwrap();
            let orders = QuadOrders::default_for_degree(2);
            let c = pair_contribution(&space, &params, 0, 0, &orders).unwrap();
            assert_eq!(c.globals, vec![0]);
            let got = c.entry(0, 0);
            assert!(
                (got - want).abs() <= 1e-10 * want,
                "s={s}: {got} vs {want} (rel {:.2e})",
                (got - want).abs() / want
            );
        }
    }

    #[test]
    fn pair_matrix_exactly_symmetric() {
        let g = geometric_nodes_1d(0.5, 1, MeshVariant::Figure).unwrap();
        for dim in 1..=2usize {
            let mesh = Arc::new(build_tensor_mesh(g.clone(), dim).unwrap());
            let space = build_space(mesh.clone(), 2).unwrap();
            let params = KernelParams::new(dim, 0.3).unwrap();
            let orders = QuadOrders::default_for_degree(2);
            let pairs: Vec<(usize, usize)> = match dim {
                1 => vec![(0, 0), (0, 1), (1, 2), (0, 3)],
                _ => vec![
                    (0, 0),
                    (0, mesh.flat_index(&[1, 0])),
                    (0, mesh.flat_index(&[1, 1])),
                    (0, mesh.flat_index(&[3, 2])),
                ],
            };
            for &(k1, k2) in &pairs {
                let c = pair_contribution(&space, &params, k1, k2, &orders).unwrap();
                let n = c.size();
                for r in 0..n {
                    for col in 0..n {
                        assert_eq!(
                            c.entry(r, col).to_bits(),
                            c.entry(col, r).to_bits(),
                            "asymmetry at ({r},{col}) for pair ({k1},{k2}), dim {dim}"
                        );
                    }
                    assert!(c.entry(r, r) > 0.0, "diagonal not positive");
                }
            }
        }
    }

    #[test]
    fn pair_entry_order_invariance() {
        let space = space_on(vec![0.0, 0.25, 0.5, 0.75, 1.0], 1, 2);
        let params = KernelParams::new(1, 0.5).unwrap();
        let orders = QuadOrders::default_for_degree(2);
        for (k1, k2) in [(0usize, 1usize), (1, 1), (0, 2)] {
            for i in 0..3 {
                for j in 0..3 {
                    let a = pair_entry(&space, &params, k1, k2, i, j, &orders).unwrap();
                    let b = pair_entry(&space, &params, k1, k2, j, i, &orders).unwrap();
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn pair_exchange_consistency() {
        // Swapping the roles of K and K' relabels x and z; the integral is
        // unchanged. Different arithmetic, so compare to tight tolerance.
        let space = space_on(vec![0.0, 0.2, 0.45, 0.8, 1.0], 1, 2);
        let params = KernelParams::new(1, 0.5).unwrap();
        let orders = QuadOrders::default_for_degree(2);
        for (k1, k2) in [(0usize, 1usize), (0, 2), (1, 3)] {
            let a = pair_contribution(&space, &params, k1, k2, &orders).unwrap();
            let b = pair_contribution(&space, &params, k2, k1, &orders).unwrap();
            assert_eq!(a.globals, b.globals);
            for r in 0..a.size() {
                for c in 0..a.size() {
                    let (x, y) = (a.entry(r, c), b.entry(r, c));
                    let scale = x.abs().max(y.abs()).max(1e-3);
                    assert!(
                        (x - y).abs() <= 1e-11 * scale,
                        "exchange mismatch at ({r},{c}): {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn far_pair_self_convergence() {
        // A well-separated pair has a smooth integrand; raising the far
        // order from 6 to 12 must not move the value.
        let space = space_on(vec![0.0, 0.25, 0.5, 0.75, 1.0], 1, 2);
        let params = KernelParams::new(1, 0.5).unwrap();
        let lo = QuadOrders { n_near: 8, n_far: 6 };
        let hi = QuadOrders { n_near: 8, n_far: 12 };
        let a = pair_contribution(&space, &params, 0, 3, &lo).unwrap();
        let b = pair_contribution(&space, &params, 0, 3, &hi).unwrap();
        for r in 0..a.size() {
            for c in 0..a.size() {
                let (x, y) = (a.entry(r, c), b.entry(r, c));
                assert!(
                    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-30),
                    "slow convergence at ({r},{c}): {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn disjoint_entry_scaling() {
        // Shrinking a disjoint configuration by half scales entries by
        // 2^{-(d-2s)} (area factor h^{2d}, kernel factor h^{-d-2s}).
        for &(dim, s) in &[(1usize, 0.25f64), (1, 0.75), (2, 0.5)] {
            let coarse: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
            let fine: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
            let space_c = space_on(coarse, dim, 2);
            let space_f = space_on(fine, dim, 2);
            let params = KernelParams::new(dim, s).unwrap();
            let orders = QuadOrders::default_for_degree(2);
            // Elements (0, 2) on each axis: [0,1/4] vs [1/2,3/4] coarse,
            // [0,1/8] vs [1/4,3/8] fine — exactly the half-scale copy.
            let (k1c, k2c, k1f, k2f) = match dim {
                1 => (0usize, 2usize, 0usize, 2usize),
                _ => {
                    let mc = space_c.mesh();
                    let mf = space_f.mesh();
                    (
                        mc.flat_index(&[0, 0]),
                        mc.flat_index(&[2, 2]),
                        mf.flat_index(&[0, 0]),
                        mf.flat_index(&[2, 2]),
                    )
                }
            };
            // First interior node of element 0 on each axis.
            let ic = 0usize;
            let jf = 0usize;
            let a = pair_entry(&space_c, &params, k1c, k2c, ic, ic, &orders).unwrap();
            let b = pair_entry(&space_f, &params, k1f, k2f, jf, jf, &orders).unwrap();
            let ratio = b / a;
            let want = 0.5f64.powf(dim as f64 - 2.0 * s);
            assert!(
                (ratio - want).abs() <= 1e-12 * want,
                "dim={dim}, s={s}: ratio {ratio} vs {want}"
            );
        }
    }

    #[test]
    fn matches_direct_quadrature_on_separated_pair() {
        // Independent check: plain tensor Gauss over K × K' (no relative
        // coordinates) for a far pair.
        let space = space_on(vec![0.0, 0.25, 0.5, 0.75, 1.0], 1, 2);
        let params = KernelParams::new(1, 0.4).unwrap();
        let orders = QuadOrders::default_for_degree(2);
        let (k1, k2) = (0usize, 3usize);
        let c = pair_contribution(&space, &params, k1, k2, &orders).unwrap();
        let rule = gauss_rule(24).unwrap();
        let n = space.dof_count();
        let mut unit = vec![0.0f64; n];
        let el1 = space.mesh().element(k1);
        let el2 = space.mesh().element(k2);
        for (r, &gi) in c.globals.iter().enumerate() {
            for (col, &gj) in c.globals.iter().enumerate() {
                let mut want = 0.0;
                for a in 0..rule.len() {
                    let x = el1.lower[0] + rule.points[a] * el1.width[0];
                    let wx = rule.weights[a] * el1.width[0];
                    unit.fill(0.0);
                    unit[gi] = 1.0;
                    let fi_x = space.eval_on_element(&unit, k1, &[x]);
                    unit.fill(0.0);
                    unit[gj] = 1.0;
                    let fj_x = space.eval_on_element(&unit, k1, &[x]);
                    for b in 0..rule.len() {
                        let z = el2.lower[0] + rule.points[b] * el2.width[0];
                        let wz = rule.weights[b] * el2.width[0];
                        unit.fill(0.0);
                        unit[gi] = 1.0;
                        let fi_z = space.eval_on_element(&unit, k2, &[z]);
                        unit.fill(0.0);
                        unit[gj] = 1.0;
                        let fj_z = space.eval_on_element(&unit, k2, &[z]);
                        let kern = (x - z).abs().powf(-(1.0 + 2.0 * params.s));
                        want += wx * wz * (fi_x - fi_z) * (fj_x - fj_z) * kern;
                    }
                }
                let got = c.entry(r, col);
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1e-6),
                    "({gi},{gj}): engine {got} vs direct {want}"
                );
            }
        }
    }

    #[test]
    fn bit_reproducible() {
        let g = geometric_nodes_1d(0.5, 1, MeshVariant::Figure).unwrap();
        let mesh = Arc::new(build_tensor_mesh(g, 2).unwrap());
        let space = build_space(mesh.clone(), 2).unwrap();
        let params = KernelParams::new(2, 0.5).unwrap();
        let orders = QuadOrders::default_for_degree(2);
        for (k1, k2) in [(0usize, 0usize), (0, 1), (0, mesh.flat_index(&[1, 1])), (0, 15)] {
            let a = pair_contribution(&space, &params, k1, k2, &orders).unwrap();
            let b = pair_contribution(&space, &params, k1, k2, &orders).unwrap();
            assert_eq!(a.globals, b.globals);
            let bits_a: Vec<u64> = a.matrix.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.matrix.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_bad_orders_and_dimension_mismatch() {
        let space = space_on(vec![0.0, 0.5, 1.0], 1, 1);
        let params = KernelParams::new(1, 0.5).unwrap();
        let bad = QuadOrders { n_near: 0, n_far: 3 };
        assert!(pair_contribution(&space, &params, 0, 1, &bad).is_err());
        let params2 = KernelParams::new(2, 0.5).unwrap();
        let good = QuadOrders::default_for_degree(1);
        assert!(pair_contribution(&space, &params2, 0, 1, &good).is_err());
    }

    #[test]
    fn union_globals_cover_both_elements() {
        let space = space_on(vec![0.0, 0.25, 0.5, 0.75, 1.0], 1, 2);
        let params = KernelParams::new(1, 0.5).unwrap();
        let orders = QuadOrders::default_for_degree(2);
        // Neighbors share the DOF at their common node.
        let c = pair_contribution(&space, &params, 1, 2, &orders).unwrap();
        // Element 1 covers grid indices 2..4 (DOFs 1,2,3), element 2 covers
        // 4..6 (DOFs 3,4,5); union is 1..=5.
        assert_eq!(c.globals, vec![1, 2, 3, 4, 5]);
        let mut sorted = c.globals.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, c.globals);
    }
}
