//! Numerical laboratory for a principal-symbol calculus on finite spectral
//! grids over the torus `[0, L)^d`.
//!
//! The crate builds the operator algebra generated by smooth multiplication
//! operators and functions of the normalised gradient, probes principal
//! symbols with localised wave packets, measures compactness through
//! singular-value decay, estimates Dixmier traces by logarithmic
//! extrapolation, and globalises the construction over an atlas of charts.
//!
//! Modules are layered bottom-up:
//!
//! * [`grid`] — spectral grids, grid functions, unitary FFT, bump profiles;
//! * [`operators`] — the operator zoo (multipliers, direction functions,
//!   pseudodifferential-like operators, diffeomorphism unitaries,
//!   Laplace–Beltrami), singular values and compactness scores;
//! * [`symbol`] — wave-packet symbol probes and symbol fields;
//! * [`trace`] — Dixmier-trace extrapolation and the residue comparison;
//! * [`manifold`] — charts, atlases, partitions of unity, globalisation.

pub mod diffeo;
pub mod error;
pub mod fft;
pub mod grid;
pub mod interp;
pub mod la;
pub mod linop;
pub mod manifold;
pub mod metric;
pub mod operators;
pub mod symbol;
pub mod trace;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
