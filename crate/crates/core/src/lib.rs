//! Port-Hamiltonian systems on port-Lagrangian submanifolds.
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`]: symbolic expressions, the expression DSL parser, derivatives;
//! * [`geometry`]: Morse families, coenergy relations and rank conditions;
//! * [`constraints`]: Legendre analysis, Poisson brackets and the
//!   Dirac–Bergmann consistency algorithm;
//! * [`dynamics`]: Dirac structures, constrained integration and power audits.

// `!(x <= tol)` is used on purpose: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod dynamics;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod sampling;
