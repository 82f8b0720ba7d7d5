//! 1D polynomial infrastructure on the reference interval `[0,1]`:
//! Gauss–Legendre and Gauss–Lobatto–Legendre rules, Gauss–Jacobi rules for
//! the radial weight `t^γ`, and barycentric Lagrange bases on GLL nodes.
//!
//! All rules are stored on `[0,1]`; affine pushforward to arbitrary
//! intervals happens at the call sites. Rules and bases are memoized in
//! process-global caches that are safe under concurrent lookup.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Hard cap on the polynomial degree of a Lagrange basis. Far above the
/// degrees used by the experiments; guards the barycentric weights against
/// overflow and the caches against unbounded growth.
pub const MAX_BASIS_DEGREE: usize = 32;

/// Hard cap on quadrature point counts.
pub const MAX_QUAD_POINTS: usize = 256;

/// Newton iteration cap for node computations. Hitting it signals an
/// implementation bug, not an input problem.
const NEWTON_MAX_ITER: usize = 100;

/// Target residual for Newton node solves, measured as the size of the
/// Newton update `|f/f'|` — the error of the root itself on `[-1,1]`. (The
/// raw function residual is not a usable criterion at higher degrees, where
/// evaluating a Legendre derivative near its root already carries more
/// roundoff than any fixed absolute threshold.)
const NEWTON_RESIDUAL: f64 = 1e-14;

/// A quadrature rule on `[0,1]`.
///
/// `points` and `weights` have equal length. For the Legendre-type rules the
/// weights sum to 1 (the length of the interval); for a Jacobi rule with
/// weight `t^γ` they sum to `1/(γ+1)`.
#[derive(Debug, Clone)]
pub struct QuadRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Apply the rule to `f` on `[0,1]`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Apply the rule to `f` pushed forward to `[a,b]`.
    pub fn integrate_on(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = b - a;
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| h * w * f(a + h * x))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Legendre evaluation
// ---------------------------------------------------------------------------

/// Value and derivative of the Legendre polynomial `P_n` at `x ∈ [-1,1]`.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut pm = 1.0; // P_{k-1}
    let mut p = x; // P_k
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * p - k as f64 * pm) / (k + 1) as f64;
        pm = p;
        p = next;
    }
    let omx2 = 1.0 - x * x;
    let dp = if omx2.abs() < 1e-30 {
        // P_n'(±1) = (±1)^{n-1} n(n+1)/2
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * (n * (n + 1)) as f64 / 2.0
    } else {
        n as f64 * (pm - x * p) / omx2
    };
    (p, dp)
}

/// Second derivative of `P_n` at interior `x`, from the Legendre ODE
/// `(1-x²) P'' = 2x P' - n(n+1) P`.
fn legendre_second_deriv(n: usize, x: f64) -> f64 {
    let (p, dp) = legendre_with_deriv(n, x);
    (2.0 * x * dp - (n * (n + 1)) as f64 * p) / (1.0 - x * x)
}

fn newton_root(
    mut x: f64,
    mut f_df: impl FnMut(f64) -> (f64, f64),
    what: &str,
) -> Result<f64> {
    for _ in 0..NEWTON_MAX_ITER {
        let (f, df) = f_df(x);
        let step = f / df;
        x -= step;
        if step.abs() < NEWTON_RESIDUAL {
            return Ok(x);
        }
    }
    Err(Error::Quadrature(format!(
        "Newton iteration for {what} did not reach residual {NEWTON_RESIDUAL:e} \
         in {NEWTON_MAX_ITER} steps"
    )))
}

// ---------------------------------------------------------------------------
// Rule constructors
// ---------------------------------------------------------------------------

fn build_gauss(n: usize) -> Result<QuadRule1D> {
    if n < 1 || n > MAX_QUAD_POINTS {
        return Err(Error::InvalidParameter(format!(
            "Gauss rule needs 1 <= n <= {MAX_QUAD_POINTS}, got {n}"
        )));
    }
    // Compute the negative half of the roots of P_n and mirror, so the rule
    // is symmetric to the last bit.
    let mut xs = vec![0.0f64; n];
    let mut ws = vec![0.0f64; n];
    for i in 0..n / 2 {
        // Standard initial guess, ordered from the largest root downwards.
        let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let root = newton_root(guess, |x| legendre_with_deriv(n, x), "Gauss-Legendre")?;
        let (_, dp) = legendre_with_deriv(n, root);
        let w = 2.0 / ((1.0 - root * root) * dp * dp);
        xs[n - 1 - i] = root;
        xs[i] = -root;
        ws[n - 1 - i] = w;
        ws[i] = w;
    }
    if n % 2 == 1 {
        let (_, dp) = legendre_with_deriv(n, 0.0);
        xs[n / 2] = 0.0;
        ws[n / 2] = 2.0 / (dp * dp);
    }
    Ok(QuadRule1D {
        points: xs.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: ws.iter().map(|w| 0.5 * w).collect(),
    })
}

fn build_gll(q: usize) -> Result<QuadRule1D> {
    if q < 1 || q > MAX_BASIS_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Lobatto rule needs 1 <= q <= {MAX_BASIS_DEGREE}, got {q}"
        )));
    }
    let n = q + 1;
    let mut xs = vec![0.0f64; n];
    xs[0] = -1.0;
    xs[n - 1] = 1.0;
    // Interior nodes are the roots of P_q'; start from Chebyshev-Lobatto
    // points and mirror the negative half.
    for i in 1..=(q - 1) / 2 {
        let guess = (std::f64::consts::PI * i as f64 / q as f64).cos();
        let root = newton_root(
            guess,
            |x| {
                let (_, dp) = legendre_with_deriv(q, x);
                (dp, legendre_second_deriv(q, x))
            },
            "Gauss-Lobatto",
        )?;
        xs[n - 1 - i] = root;
        xs[i] = -root;
    }
    if q >= 2 && q % 2 == 0 {
        xs[q / 2] = 0.0;
    }
    let scale = 2.0 / (q * (q + 1)) as f64;
    let ws: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let (p, _) = legendre_with_deriv(q, x);
            scale / (p * p)
        })
        .collect();
    Ok(QuadRule1D {
        points: xs.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: ws.iter().map(|w| 0.5 * w).collect(),
    })
}

/// Gauss–Jacobi rule for `∫_0^1 t^γ f(t) dt`, `γ > -1`, via Golub–Welsch on
/// the symmetric Jacobi matrix of the monic recurrence for the weight
/// `(1+x)^γ` on `[-1,1]`.
fn build_jacobi(n: usize, gamma: f64) -> Result<QuadRule1D> {
    if n < 1 || n > MAX_QUAD_POINTS {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Jacobi rule needs 1 <= n <= {MAX_QUAD_POINTS}, got {n}"
        )));
    }
    if !gamma.is_finite() || gamma <= -1.0 {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Jacobi weight exponent must satisfy gamma > -1, got {gamma}"
        )));
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kk = k as f64;
        // Diagonal a_k of the monic recurrence; a_0 written in its limit form
        // so gamma = 0 is regular.
        let a = if k == 0 {
            gamma / (gamma + 2.0)
        } else {
            gamma * gamma / ((2.0 * kk + gamma) * (2.0 * kk + gamma + 2.0))
        };
        jac[(k, k)] = a;
        if k >= 1 {
            let t = 2.0 * kk + gamma;
            let b = 4.0 * kk * kk * (kk + gamma) * (kk + gamma)
                / (t * t * (t + 1.0) * (t - 1.0));
            let off = b.sqrt();
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    // mu0 = ∫_{-1}^{1} (1+x)^γ dx
    let mu0 = 2f64.powf(gamma + 1.0) / (gamma + 1.0);
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (x, mu0 * v0 * v0)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Map to [0,1] with weight t^γ: t = (1+x)/2 pulls out a factor 2^{γ+1}.
    let scale = 2f64.powf(-(gamma + 1.0));
    let rule = QuadRule1D {
        points: nodes.iter().map(|&(x, _)| 0.5 * (x + 1.0)).collect(),
        weights: nodes.iter().map(|&(_, w)| scale * w).collect(),
    };
    // Golub-Welsch sanity: the zeroth moment must come out exactly.
    let m0: f64 = rule.weights.iter().sum();
    let expect = 1.0 / (gamma + 1.0);
    if (m0 - expect).abs() > 1e-12 * expect.abs() {
        return Err(Error::Quadrature(format!(
            "Gauss-Jacobi zeroth moment off: got {m0}, want {expect}"
        )));
    }
    Ok(rule)
}

// ---------------------------------------------------------------------------
// Caches
// ---------------------------------------------------------------------------

type Cache<K, T> = OnceLock<RwLock<HashMap<K, Arc<T>>>>;

fn cached<K, T, F>(cell: &'static Cache<K, T>, key: K, make: F) -> Result<Arc<T>>
where
    K: Eq + Hash + Clone,
    F: FnOnce() -> Result<T>,
{
    let map = cell.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(hit) = map.read().expect("cache lock poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let value = Arc::new(make()?);
    let mut guard = map.write().expect("cache lock poisoned");
    Ok(guard.entry(key).or_insert(value).clone())
}

static GAUSS_CACHE: Cache<usize, QuadRule1D> = OnceLock::new();
static GLL_CACHE: Cache<usize, QuadRule1D> = OnceLock::new();
static JACOBI_CACHE: Cache<(usize, u64), QuadRule1D> = OnceLock::new();
static BASIS_CACHE: Cache<usize, LagrangeBasis1D> = OnceLock::new();

/// The `n`-point Gauss–Legendre rule on `[0,1]` (exact through degree 2n-1).
pub fn gauss_rule(n: usize) -> Result<Arc<QuadRule1D>> {
    cached(&GAUSS_CACHE, n, || build_gauss(n))
}

/// The `q+1`-point Gauss–Lobatto–Legendre rule on `[0,1]`, endpoints
/// included (exact through degree 2q-1).
pub fn gll_rule(q: usize) -> Result<Arc<QuadRule1D>> {
    cached(&GLL_CACHE, q, || build_gll(q))
}

/// The `n`-point Gauss–Jacobi rule for `∫_0^1 t^γ f(t) dt` (exact for `f`
/// through degree 2n-1), `γ > -1`.
pub fn jacobi_rule(n: usize, gamma: f64) -> Result<Arc<QuadRule1D>> {
    cached(&JACOBI_CACHE, (n, gamma.to_bits()), || build_jacobi(n, gamma))
}

/// The degree-`q` Lagrange basis on GLL nodes, memoized.
pub fn lagrange_basis(q: usize) -> Result<Arc<LagrangeBasis1D>> {
    cached(&BASIS_CACHE, q, LagrangeBasis1D::new_fn(q))
}

// ---------------------------------------------------------------------------
// Lagrange basis
// ---------------------------------------------------------------------------

/// Snap distance for identifying an evaluation point with a basis node.
/// Evaluation exactly at a node must return the cardinal values so that
/// interpolation is a projection to the last bit.
const NODE_SNAP: f64 = 1e-12;

/// Barycentric Lagrange basis of degree `q` on the GLL nodes of `[0,1]`.
#[derive(Debug, Clone)]
pub struct LagrangeBasis1D {
    degree: usize,
    nodes: Vec<f64>,
    bary: Vec<f64>,
    /// Nodal differentiation matrix, row-major: `diff[k*(q+1)+j] = ℓ_j'(x_k)`.
    diff: Vec<f64>,
}

impl LagrangeBasis1D {
    pub fn new(q: usize) -> Result<Self> {
        if q < 1 || q > MAX_BASIS_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "Lagrange basis needs 1 <= q <= {MAX_BASIS_DEGREE}, got {q}"
            )));
        }
        let nodes = gll_rule(q)?.points.clone();
        let m = q + 1;
        let mut bary = vec![0.0f64; m];
        for j in 0..m {
            let mut prod = 1.0;
            for k in 0..m {
                if k != j {
                    prod *= nodes[j] - nodes[k];
                }
            }
            bary[j] = 1.0 / prod;
        }
        let mut diff = vec![0.0f64; m * m];
        for k in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                if j != k {
                    let d = (bary[j] / bary[k]) / (nodes[k] - nodes[j]);
                    diff[k * m + j] = d;
                    row_sum += d;
                }
            }
            diff[k * m + k] = -row_sum;
        }
        Ok(Self { degree: q, nodes, bary, diff })
    }

    fn new_fn(q: usize) -> impl FnOnce() -> Result<Self> {
        move || Self::new(q)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The interpolation nodes (GLL points on `[0,1]`, endpoints included).
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn snap(&self, x: f64) -> Option<usize> {
        self.nodes.iter().position(|&n| (x - n).abs() <= NODE_SNAP)
    }

    /// All basis values at `x`, written into `out` (length `q+1`).
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.degree + 1);
        if let Some(k) = self.snap(x) {
            out.fill(0.0);
            out[k] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            let term = self.bary[j] / (x - self.nodes[j]);
            *o = term;
            denom += term;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }

    /// All basis derivatives at `x`, written into `out` (length `q+1`).
    pub fn deriv_all(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.degree + 1);
        let m = self.degree + 1;
        if let Some(k) = self.snap(x) {
            out.copy_from_slice(&self.diff[k * m..(k + 1) * m]);
            return;
        }
        // Off the nodes: ℓ_j'(x) = ℓ_j(x) (S(x) - 1/(x - x_j)) with
        // S(x) = Σ_m 1/(x - x_m), from the product form of ℓ_j.
        let mut vals = vec![0.0f64; m];
        self.eval_all(x, &mut vals);
        let s: f64 = self.nodes.iter().map(|&n| 1.0 / (x - n)).sum();
        for j in 0..m {
            out[j] = vals[j] * (s - 1.0 / (x - self.nodes[j]));
        }
    }

    /// Value of the `j`-th basis function at `x`.
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        let mut buf = vec![0.0f64; self.degree + 1];
        self.eval_all(x, &mut buf);
        buf[j]
    }

    /// Derivative of the `j`-th basis function at `x`.
    pub fn deriv(&self, j: usize, x: f64) -> f64 {
        let mut buf = vec![0.0f64; self.degree + 1];
        self.deriv_all(x, &mut buf);
        buf[j]
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
        assert!(
            (got - want).abs() <= tol,
            "{what}: got {got}, want {want} (tol {tol:e})"
        );
    }

    #[test]
    fn gauss_small_rules_match_closed_forms() {
        let r1 = gauss_rule(1).unwrap();
        assert_close(r1.points[0], 0.5, 1e-15, "midpoint node");
        assert_close(r1.weights[0], 1.0, 1e-15, "midpoint weight");

        let r2 = gauss_rule(2).unwrap();
        let off = 1.0 / (2.0 * 3f64.sqrt());
        assert_close(r2.points[0], 0.5 - off, 1e-15, "2-pt node lo");
        assert_close(r2.points[1], 0.5 + off, 1e-15, "2-pt node hi");
        assert_close(r2.weights[0], 0.5, 1e-15, "2-pt weight lo");
        assert_close(r2.weights[1], 0.5, 1e-15, "2-pt weight hi");

        let r3 = gauss_rule(3).unwrap();
        let x5 = r3.integrate(|x| x.powi(5));
        assert_close(x5, 1.0 / 6.0, 1e-14, "3-pt rule on x^5");
    }

    #[test]
    fn gauss_monomial_exactness() {
        for n in 1..=12 {
            let rule = gauss_rule(n).unwrap();
            for k in 0..=(2 * n - 1) {
                let got = rule.integrate(|x| x.powi(k as i32));
                let want = 1.0 / (k as f64 + 1.0);
                assert!(
                    (got - want).abs() <= 1e-12 * want,
                    "Gauss n={n} monomial x^{k}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn gauss_weights_sum_positive_symmetric() {
        for n in 1..=20 {
            let rule = gauss_rule(n).unwrap();
            let sum: f64 = rule.weights.iter().sum();
            assert_close(sum, 1.0, 1e-13, "weight sum");
            for i in 0..n {
                assert!(rule.weights[i] > 0.0);
                assert_close(
                    rule.points[i] + rule.points[n - 1 - i],
                    1.0,
                    1e-15,
                    "node symmetry",
                );
            }
        }
    }

    #[test]
    fn gll_frozen_tables() {
        let r1 = gll_rule(1).unwrap();
        assert_eq!(r1.points, vec![0.0, 1.0]);
        assert_close(r1.weights[0], 0.5, 1e-15, "q=1 w0");
        assert_close(r1.weights[1], 0.5, 1e-15, "q=1 w1");

        let r2 = gll_rule(2).unwrap();
        assert_eq!(r2.points, vec![0.0, 0.5, 1.0]);
        assert_close(r2.weights[0], 1.0 / 6.0, 1e-15, "q=2 w0");
        assert_close(r2.weights[1], 2.0 / 3.0, 1e-15, "q=2 w1");
        assert_close(r2.weights[2], 1.0 / 6.0, 1e-15, "q=2 w2");

        let r3 = gll_rule(3).unwrap();
        let lo = 0.5 * (1.0 - 1.0 / 5f64.sqrt());
        let hi = 0.5 * (1.0 + 1.0 / 5f64.sqrt());
        assert_close(r3.points[1], lo, 1e-15, "q=3 interior lo");
        assert_close(r3.points[2], hi, 1e-15, "q=3 interior hi");
        assert_close(r3.weights[0], 1.0 / 12.0, 1e-15, "q=3 w0");
        assert_close(r3.weights[1], 5.0 / 12.0, 1e-15, "q=3 w1");
        assert_close(r3.weights[2], 5.0 / 12.0, 1e-15, "q=3 w2");
        assert_close(r3.weights[3], 1.0 / 12.0, 1e-15, "q=3 w3");
    }

    #[test]
    fn gll_exactness_and_symmetry() {
        for q in 1..=10 {
            let rule = gll_rule(q).unwrap();
            assert_eq!(rule.len(), q + 1);
            assert_eq!(rule.points[0], 0.0);
            assert_eq!(rule.points[q], 1.0);
            let sum: f64 = rule.weights.iter().sum();
            assert_close(sum, 1.0, 1e-13, "GLL weight sum");
            for k in 0..=(2 * q - 1) {
                let got = rule.integrate(|x| x.powi(k as i32));
                let want = 1.0 / (k as f64 + 1.0);
                assert!(
                    (got - want).abs() <= 1e-12 * want,
                    "GLL q={q} monomial x^{k}: got {got}, want {want}"
                );
            }
            for i in 0..=q {
                assert!(rule.weights[i] > 0.0);
                assert_close(
                    rule.points[i] + rule.points[q - i],
                    1.0,
                    1e-15,
                    "GLL node symmetry",
                );
            }
        }
    }

    #[test]
    fn jacobi_reduces_to_legendre_at_gamma_zero() {
        for n in [1usize, 2, 5, 8] {
            let j = jacobi_rule(n, 0.0).unwrap();
            let g = gauss_rule(n).unwrap();
            for i in 0..n {
                assert_close(j.points[i], g.points[i], 1e-13, "node vs Legendre");
                assert_close(j.weights[i], g.weights[i], 1e-13, "weight vs Legendre");
            }
        }
    }

    #[test]
    fn jacobi_weighted_moments() {
        for &gamma in &[0.5, -0.5, 0.25] {
            let n = 8;
            let rule = jacobi_rule(n, gamma).unwrap();
            for k in 0..=(2 * n - 1) {
                // ∫_0^1 t^γ t^k dt = 1/(γ+k+1)
                let got = rule.integrate(|t| t.powi(k as i32));
                let want = 1.0 / (gamma + k as f64 + 1.0);
                assert!(
                    (got - want).abs() <= 1e-12 * want,
                    "Jacobi gamma={gamma} moment {k}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gauss_rule(0).is_err());
        assert!(gll_rule(0).is_err());
        assert!(gll_rule(MAX_BASIS_DEGREE + 1).is_err());
        assert!(jacobi_rule(4, -1.0).is_err());
        assert!(jacobi_rule(0, 0.5).is_err());
        assert!(LagrangeBasis1D::new(0).is_err());
    }

    #[test]
    fn basis_cardinality_and_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for q in 1..=8 {
            let basis = lagrange_basis(q).unwrap();
            let mut buf = vec![0.0f64; q + 1];
            for (k, &node) in basis.nodes().iter().enumerate() {
                basis.eval_all(node, &mut buf);
                for j in 0..=q {
                    let want = if j == k { 1.0 } else { 0.0 };
                    assert_close(buf[j], want, 1e-12, "cardinality");
                }
            }
            for _ in 0..50 {
                let x: f64 = rng.gen();
                basis.eval_all(x, &mut buf);
                let sum: f64 = buf.iter().sum();
                assert_close(sum, 1.0, 1e-12, "partition of unity");
                basis.deriv_all(x, &mut buf);
                let dsum: f64 = buf.iter().sum();
                assert_close(dsum, 0.0, 1e-11, "derivative sum");
            }
        }
    }

    #[test]
    fn basis_low_degree_closed_forms() {
        let b1 = lagrange_basis(1).unwrap();
        for &x in &[0.0, 0.3, 0.77, 1.0] {
            assert_close(b1.eval(0, x), 1.0 - x, 1e-14, "q=1 l0");
            assert_close(b1.eval(1, x), x, 1e-14, "q=1 l1");
        }
        assert_close(b1.deriv(0, 0.3), -1.0, 1e-13, "q=1 l0'");

        let b2 = lagrange_basis(2).unwrap();
        assert_close(b2.eval(1, 0.25), 0.75, 1e-14, "q=2 bubble at 1/4");
        for &x in &[0.1, 0.25, 0.6, 0.9] {
            assert_close(b2.eval(1, x), 4.0 * x * (1.0 - x), 1e-13, "q=2 bubble");
            assert_close(b2.deriv(1, x), 4.0 - 8.0 * x, 1e-12, "q=2 bubble'");
        }
    }

    #[test]
    fn barycentric_matches_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for q in 1..=12 {
            let basis = lagrange_basis(q).unwrap();
            let nodes = basis.nodes().to_vec();
            let mut buf = vec![0.0f64; q + 1];
            for _ in 0..50 {
                let x: f64 = rng.gen();
                basis.eval_all(x, &mut buf);
                for j in 0..=q {
                    // Direct product-form evaluation, the independent path.
                    let mut prod = 1.0;
                    for m in 0..=q {
                        if m != j {
                            prod *= (x - nodes[m]) / (nodes[j] - nodes[m]);
                        }
                    }
                    assert!(
                        (buf[j] - prod).abs() <= 1e-12 * prod.abs().max(1.0),
                        "barycentric vs product, q={q} j={j} x={x}: {} vs {prod}",
                        buf[j]
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_rows_at_nodes_differentiate_polynomials() {
        // d/dx of the interpolant of x^3 at GLL nodes must equal 3x^2 at the
        // nodes themselves for q >= 3.
        let q = 4;
        let basis = lagrange_basis(q).unwrap();
        let nodes = basis.nodes().to_vec();
        let mut der = vec![0.0f64; q + 1];
        for (_, &xk) in nodes.iter().enumerate() {
            basis.deriv_all(xk, &mut der);
            let got: f64 = nodes
                .iter()
                .zip(&der)
                .map(|(&xj, &d)| d * xj.powi(3))
                .sum();
            assert_close(got, 3.0 * xk * xk, 1e-11, "nodal derivative of x^3");
        }
    }

    #[test]
    fn caches_are_concurrency_safe() {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                std::thread::spawn(move || {
                    let n = 2 + (i % 4);
                    let g = gauss_rule(n).unwrap();
                    let l = gll_rule(n).unwrap();
                    let j = jacobi_rule(n, 0.5).unwrap();
                    (g.len(), l.len(), j.len())
                })
            })
            .collect();
        for h in handles {
            let (g, l, j) = h.join().unwrap();
            assert_eq!(g, j);
            assert_eq!(l, g + 1);
        }
    }
}
