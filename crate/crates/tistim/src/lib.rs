//! Forward-modelling engine for transcranial temporal interference stimulation.
//!
//! The library assembles the complete-electrode-model (CEM) finite element
//! system over a tetrahedral head mesh with complex admittivity, solves it for
//! resistance and lead-field matrices, linearizes those with respect to
//! electrode contact-impedance changes, and evaluates interference-envelope
//! fields together with stabilized difference metrics.
//!
//! Units are fixed throughout: coordinates in mm, admittivity supplied in S/m
//! (converted to S/mm at assembly), impedances in Ω, currents in mA. With
//! those choices the system blocks A, B, C are in 1/Ω, the resistance matrix
//! in Ω, nodal potentials in mV, the lead field in 1/mm² and volume current
//! densities in mA/mm².

pub mod cem;
pub mod electrode;
pub mod error;
pub mod interference;
pub mod io;
pub mod leadfield;
pub mod linearize;
pub mod materials;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use num_complex::Complex64;
