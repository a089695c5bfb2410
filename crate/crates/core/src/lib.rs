//! Solver, verifier and simulator for two-agent lock acquisition races under
//! partial information.
//!
//! Agents control Poisson contact rates, pay for the time-integrated rate and
//! earn a unit reward for being first at lock one (and, in the two-lock game,
//! then reaching lock two before the deadline). Each agent learns only its own
//! contact outcome. The crate provides closed-form utilities and equilibria,
//! independent numerical oracles that certify them, an HJB residual checker
//! and an exact Monte Carlo simulator.

pub mod analytic;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod hjb;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
