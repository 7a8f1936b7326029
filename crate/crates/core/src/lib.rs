//! Cooperative energy communities under net energy metering: prosumer
//! scheduling, coalition values, core checks and payoff allocation.

pub mod alloc;
pub mod error;
pub mod game;
pub mod harness;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
