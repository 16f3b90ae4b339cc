//! Numerical laboratory for time-dependent Hamiltonians spanned by finite Lie
//! algebras: dynamical invariants, the autonomous (Howland) extension,
//! section maps and chaos diagnostics, and the finite-dimensional quantum
//! counterpart on spin representations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod csv;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod howland;
pub mod integrator;
pub mod invariant;
pub mod quantum;
pub mod sections;

pub use error::{Error, Result};
