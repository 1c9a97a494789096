//! Desk-scale real-to-sim policy evaluation: a deterministic spring-mass
//! soft-body engine with Gaussian-splat scene state, real-to-sim alignment
//! tooling (pose + color), a Gym-style environment with an external policy
//! protocol, and evaluation statistics.

pub mod align;
pub mod color;
pub mod engine;
pub mod env;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod robot;
pub mod splat;
pub mod twin;

pub use error::{CoreError, Result};
