//! Model predictive contouring control with torque vectoring.
//!
//! Library crate backing the `mpcctv` binary: double-track vehicle dynamics,
//! extended Fiala tyre model, reference-path and obstacle geometry, OCP
//! assembly over the prediction horizon, and a closed-loop simulation
//! harness comparing controller variants.

pub mod config;
pub mod math;
pub mod sim;
pub mod ocp;
pub mod track;
pub mod tyre;
pub mod vehicle;
