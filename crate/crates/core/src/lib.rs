//! Welfare-optimal coordination of large populations of constrained agents
//! coupled through an aggregate price.
//!
//! The crate builds agent populations ([`model`]), solves each agent's
//! quadratic program ([`agent_solver`], [`qp`]), runs the coordination
//! schemes ([`coordination`]) and checks the results ([`verification`]).
//! [`harness`] ties scenarios, solvers and output files together.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent_solver;
pub mod coordination;
pub mod error;
pub mod harness;
pub mod model;
pub mod qp;
pub mod vecops;
pub mod verification;

pub use error::{Error, Result};
