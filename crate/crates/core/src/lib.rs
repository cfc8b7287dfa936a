//! Gerber-Shiu expected discounted penalty functions for the compound Poisson
//! surplus process with credit interest and an optional dividend barrier.
//!
//! Three independent solvers are provided: a physics-informed neural network
//! ([`pinn`]), a Volterra-equation reference solver ([`volterra`]) and a Monte
//! Carlo simulator ([`montecarlo`]).

pub mod error;
pub mod initial_value;
pub mod montecarlo;
pub mod network;
pub mod optimizer;
pub mod pinn;
pub mod quadrature;
pub mod risk_model;
pub mod table;
pub mod volterra;

pub use error::{Error, Result};
pub use risk_model::{ClaimDistribution, ErlangTerm, PenaltyCase, RiskModel};
pub use table::SolutionTable;
