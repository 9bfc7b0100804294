//! Physical constants. All internal quantities are SI with angular
//! frequencies in rad/s.

use std::f64::consts::TAU;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Bohr magneton over Planck's reduced constant, rad/s per gauss
/// (2π × 1.399624 MHz/G).
pub const MU_B_OVER_HBAR_PER_GAUSS: f64 = TAU * 1.399_624e6;
