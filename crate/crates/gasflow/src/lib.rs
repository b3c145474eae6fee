//! Steady-state gas network flow solver.
//!
//! Computes nodal pressures, edge mass flows, and recovered slack
//! injections for pipeline networks under ideal or CNGA gas behaviour.
//! The flow equations are non-dimensionalized before a plain Newton-Raphson
//! iteration solves them; converged iterates are classified against the
//! monotone pressure domain, which turns unphysical converged solutions
//! into infeasibility certificates naming the offending elements.
//!
//! Modules:
//! - [`network`]: data model, instance parsing, structural checks,
//!   incidence matrices, randomized perturbation;
//! - [`eos`]: ideal/CNGA equations of state and the potential function;
//! - [`scaling`]: nominal values and the dimensionless network;
//! - [`solver`]: Newton iteration, outcome classification, certificates;
//! - [`oracle`]: independent reference solvers used for validation.

pub mod eos;
mod linalg;
pub mod network;
pub mod oracle;
pub mod scaling;
pub mod solver;
