//! Constant-pH λ-dynamics on model Hamiltonians, with the titration,
//! coupling and functional-mode analyses that consume its trajectories.

pub mod bias;
pub mod calibration;
pub mod config;
pub mod coupling;
pub mod dbo;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod fma;
pub mod pfc;
pub mod quadrature;
pub mod rng;
pub mod titration;
pub mod units;

pub use error::{Error, Result};
