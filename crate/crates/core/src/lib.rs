//! Light storage and retrieval in a degenerate atomic ensemble under
//! electromagnetically induced transparency.
//!
//! The crate covers the full chain from angular-momentum algebra to the
//! time-domain Maxwell-Bloch simulation of a store-and-retrieve protocol:
//!
//! * [`angmom`]: Clebsch-Gordan coefficients and Wigner rotation matrices.
//! * [`scheme`]: level scheme, polarizations, geometry, magnetic field and
//!   derived coupling tables.
//! * [`spectra`]: steady-state susceptibility, transparency scans and group
//!   velocity.
//! * [`dynamics`]: retarded-frame integrator for the coupled field and
//!   coherence equations, including Larmor precession.
//! * [`polariton`]: dark/bright polariton decomposition and the analytic
//!   retrieval-efficiency calculator.
//! * [`config`] and [`cli`]: JSON experiment configuration and the command
//!   line front end.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angmom;
pub mod cli;
pub mod config;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod output;
pub mod polariton;
pub mod scheme;
pub mod spectra;

pub use error::{Error, Result};
