//! Numerical laboratory for Jacobi and Riccati flows, horospheres, volume
//! asymptotics and boundary measures on negatively curved spaces.

pub mod asymptotics;
pub mod boundary;
pub mod comparison;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod jacobi;
pub mod ode;
pub mod profile;
pub mod quadrature;
pub mod report;
pub mod surface;

pub use error::{Error, Result};
