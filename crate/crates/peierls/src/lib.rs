//! Numerical laboratory for effective single-band dynamics of a fibered Hamiltonian
//! H = H0(p) + V(i eps d/dp) versus the Peierls-substituted H1 = E(p) + V(i eps d/dp).

pub mod error;
pub mod experiments;
pub mod fiber;
pub mod flow;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod potential;
pub mod propagators;
pub mod weyl;

pub use error::{Error, Result};
pub use linalg::C64;
