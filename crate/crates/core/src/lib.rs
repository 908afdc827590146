//! Numerical machinery for Carleman estimates of divergence-form elliptic
//! operators `Δ_g u = ∂_i(g^{ij} ∂_j u)`.
//!
//! The crate is `no_std` (it only needs `alloc`) and is organised bottom-up:
//!
//! * [`linalg`] and [`expr`] are small self-contained utilities (dense
//!   symmetric matrices, a differentiable expression grammar).
//! * [`fields`] evaluates metrics and weight functions and checks their
//!   structural bounds.
//! * [`pseudoconvexity`] evaluates the quadratic forms `q` and `Q`,
//!   certifies the pseudoconvexity condition and searches the exponent `μ`
//!   of `φ = e^{μψ}`.
//! * [`grid`] holds Cartesian grids with ball/annulus masks, the face-flux
//!   operator, quadrature, cutoffs and test functions.
//! * [`carleman`] conjugates the operator with `e^{τφ}` and measures the
//!   Carleman ratio over τ sweeps.
//! * [`solver`] assembles and solves `Δ_g u = ⟨b, ∇_g u⟩ + a u`.
//! * [`three_sphere`] computes the three-ball norms, the exponent `θ` and the
//!   empirical constant.
//!
//! IO, configuration and the command-line front end live in the companion
//! `carleman-toolkit` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` rejects NaN on purpose; float literal guards read better than
// float patterns; index loops mirror the tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod carleman;
pub mod error;
pub mod expr;
pub mod fields;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod pseudoconvexity;
pub mod solver;
pub mod three_sphere;

pub use error::{Error, Result};
