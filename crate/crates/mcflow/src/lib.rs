//! Solvers for approximate multi-commodity flow and the composite norm
//! regression problems they reduce to.
//!
//! The pipeline, bottom to top: single-commodity convex flow oracles
//! ([`sco`]), high-accuracy composite l_{q,p} regression by iterative
//! refinement ([`lqp`]), an extragradient box-simplex saddle solver with a
//! doubly-entropic regularizer ([`boxsimplex`]), the l_{1,inf} outer loop
//! ([`l1inf`]), and the flow applications built on it ([`mcf`]).
//! [`reference`] holds independent ground-truth solvers used by tests.

pub mod boxsimplex;
pub mod cost;
pub mod error;
pub mod l1inf;
pub mod lqp;
pub mod mcf;
pub mod model;
pub mod reference;
pub mod sco;
mod util;

pub use error::SolveError;
