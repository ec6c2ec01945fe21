//! Isogeometric plastic and elastic field solver for prescribed dislocation
//! distributions in a box.
//!
//! The plastic stage solves `dTheta = tau` with `delta Theta = 0` as a
//! saddle-point system. The elastic stage relaxes the resulting
//! incompatible metric with a St. Venant-Kirchhoff energy.

pub mod basis;
pub mod config;
pub mod dislocation;
pub mod error;
pub mod export;
pub mod geometry;
pub mod krylov;
pub mod kron;
pub mod material;
pub mod oracles;
pub mod elastic;
pub mod pipeline;
pub mod plastic;
pub mod sparse;

pub use error::{Error, Result};
