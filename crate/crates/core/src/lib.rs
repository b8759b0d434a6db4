//! Impulse control under an adverse nonlinear expectation on finite scenario
//! lattices.
//!
//! The controller pays intervention costs and a terminal reward and wants
//! them small; an adversary picks, node by node, one of finitely many
//! transition kernels and wants them large. The crate solves the truncated
//! dynamic programming recursion for the game value, extracts the optimal
//! control and worst-case adversary, and certifies the results against
//! brute-force enumeration on small instances. The [`sdg`] module compiles an
//! uncertain-volatility SDE with controlled jumps onto a trinomial lattice and
//! cross-checks it by Monte Carlo.

pub mod config;
pub mod dpp;
pub mod error;
pub mod expectation;
pub mod extraction;
pub mod instances;
pub mod lattice;
pub mod oracle;
pub mod random;
pub mod sdg;

pub use error::{Error, Result};
