//! Finite element laboratory for the wave equation with hyperbolic dynamical
//! boundary conditions, monotone damping and nonlinear sources.
//!
//! The crate is organized bottom-up: [`mesh`] builds the canonical
//! geometries, [`assembly`] the P1 operators, [`nonlin`] the power-sum
//! nonlinearities, [`regime`] the exponent arithmetic and hypothesis checks,
//! [`energy`] the energy functionals, [`stepper`] the implicit integrator and
//! [`harness`] the canned experiments built on top of them. [`selftest`]
//! bundles seeded randomized checks of the structural invariants.

pub mod assembly;
pub mod energy;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod nonlin;
pub mod regime;
pub mod selftest;
pub mod stepper;

pub use error::{Error, Result};
