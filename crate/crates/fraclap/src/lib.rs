//! hp finite elements for the integral fractional Laplacian on the unit box.
//!
//! This crate discretizes the homogeneous exterior-Dirichlet problem
//!
//! ```text
//! (-Δ)^s u = f   in Ω = (0,1)^d,        u = 0 on ℝ^d ∖ Ω,      d ∈ {1,2,3},
//! ```
//!
//! with tensor-product Lagrange elements of uniform degree `q` on meshes that
//! are geometrically graded towards the boundary. The weak form splits into a
//! symmetrized double integral over Ω × Ω plus a weighted mass term carrying
//! the interaction with the exterior:
//!
//! ```text
//! a(u,v) = C(d,s)/2 ∬ (u(x)-u(z))(v(x)-v(z)) |x-z|^{-d-2s} dx dz
//!        + C(d,s)  ∫ u(x) v(x) κ(x) dx,     κ(x) = ∫_{Ω^c} |x-z|^{-d-2s} dz.
//! ```
//!
//! Module map:
//! - [`quad`]: Gauss–Legendre / Gauss–Lobatto–Legendre / Gauss–Jacobi rules
//!   and barycentric Lagrange bases on `[0,1]`.
//! - [`mesh`]: geometric tensor meshes, boundary/transition layer tags, and
//!   the piecewise-multilinear cutoff.
//! - [`space`]: the global conforming space with the Dirichlet trace removed.
//! - [`interp`]: tensor Gauss–Lobatto interpolation (per element and global).
//! - [`kernel`]: kernel constant, exterior weight κ, and the singular
//!   element-pair quadrature engine.
//! - [`assembly`]: dense symmetric Galerkin assembly (optionally parallel)
//!   and the Cholesky solve.
//! - [`norms`]: distance functions, weighted H¹ norms, a brute-force
//!   Slobodeckij oracle, and energy extrapolation.
//! - [`reference`]: the closed-form 1D solution used for validation.
//! - [`experiment`]: the convergence-study driver and its CSV interface.

pub mod assembly;
pub mod error;
pub mod experiment;
pub mod interp;
pub mod kernel;
pub mod mesh;
pub mod norms;
pub mod quad;
pub mod reference;
pub mod space;

pub use error::{Error, Result};
