//! Atomic level scheme, field polarizations, sample geometry and magnetic
//! field, plus the coupling tables derived from them.
//!
//! Signal (helicity α) drives |g,m⟩ ↔ |e,m+α⟩ with strength C_{mα};
//! control (helicity β) drives |g′,m′⟩ ↔ |e,m′+β⟩ with strength C′_{m′β}.
//! The coupling constant κ is taken m-independent, all m-dependence lives in
//! the Clebsch-Gordan factors.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::Serialize;

use crate::angmom::{clebsch_gordan, HalfInt};
use crate::constants::{MU_B_OVER_HBAR_PER_GAUSS, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// Hyperfine levels g, g′ and e of a three-level degenerate system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelScheme {
    pub f_g: HalfInt,
    pub f_gp: HalfInt,
    pub f_e: HalfInt,
    /// Energy of g′ above g, rad/s.
    pub omega_gp: f64,
    /// Optical transition frequency g ↔ e, rad/s.
    pub omega_e: f64,
    /// Decay rate of e, rad/s.
    pub gamma_e: f64,
    pub g_g: f64,
    pub g_gp: f64,
    pub g_e: f64,
    /// Fraction of decays from e that end in g.
    pub eta: f64,
}

impl LevelScheme {
    /// The ⁸⁵Rb D1 scheme: 5S₁/₂ F=2 and F=3 ground levels, 5P₁/₂ F=3.
    ///
    /// Landé factors use g_g′ = −g_g = 1/3 and g_e = 1/9; η defaults to 0.5.
    pub fn rb85_d1() -> Self {
        LevelScheme {
            f_g: HalfInt::integer(2),
            f_gp: HalfInt::integer(3),
            f_e: HalfInt::integer(3),
            omega_gp: TAU * 3.035_732_439e9,
            omega_e: TAU * 377.107_385_690e12,
            gamma_e: TAU * 5.98e6,
            g_g: -1.0 / 3.0,
            g_gp: 1.0 / 3.0,
            g_e: 1.0 / 9.0,
            eta: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("F_g", self.f_g), ("F_gp", self.f_gp), ("F_e", self.f_e)] {
            if f.twice() < 0 {
                return Err(Error::Config(format!("{name} = {f} is negative")));
            }
        }
        let one = HalfInt::integer(1);
        for (name, f) in [("F_g", self.f_g), ("F_gp", self.f_gp)] {
            let allowed = self.f_e >= (f - one).abs()
                && self.f_e <= f + one
                && self.f_e.same_parity(f)
                && !(f == HalfInt::ZERO && self.f_e == HalfInt::ZERO);
            if !allowed {
                return Err(Error::Config(format!(
                    "F_e = {} is not dipole-coupled to {name} = {f}",
                    self.f_e
                )));
            }
        }
        if !(self.gamma_e > 0.0 && self.gamma_e.is_finite()) {
            return Err(Error::Config("gamma_e must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta = {} outside [0, 1]", self.eta)));
        }
        if !(self.omega_e > 0.0 && self.omega_e.is_finite()) {
            return Err(Error::Config("omega_e must be positive".into()));
        }
        for (name, g) in [("g_g", self.g_g), ("g_gp", self.g_gp), ("g_e", self.g_e)] {
            if !g.is_finite() {
                return Err(Error::Config(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    /// Ground-state occupation per sublevel, 1/(2F_g+1).
    pub fn p(&self) -> f64 {
        1.0 / self.f_g.multiplicity() as f64
    }

    /// Largest |g_s|·F_s over the three levels, for time-step bounds.
    pub fn max_zeeman_weight(&self) -> f64 {
        [(self.g_g, self.f_g), (self.g_gp, self.f_gp), (self.g_e, self.f_e)]
            .iter()
            .map(|(g, f)| g.abs() * f.as_f64())
            .fold(0.0, f64::max)
    }
}

/// Circular polarizations (helicities) of signal and control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FieldPolarizations {
    pub alpha: i32,
    pub beta: i32,
}

impl FieldPolarizations {
    pub fn new(alpha: i32, beta: i32) -> Result<Self> {
        if alpha.abs() != 1 || beta.abs() != 1 {
            return Err(Error::Config(format!("helicities must be ±1, got alpha = {alpha}, beta = {beta}")));
        }
        Ok(FieldPolarizations { alpha, beta })
    }

    /// α − β, the shift between the g and g′ indices of the spin wave.
    pub fn shift(&self) -> HalfInt {
        HalfInt::integer(self.alpha - self.beta)
    }

    pub fn alpha_h(&self) -> HalfInt {
        HalfInt::integer(self.alpha)
    }

    pub fn beta_h(&self) -> HalfInt {
        HalfInt::integer(self.beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleGeometry {
    /// Sample length, m.
    pub length: f64,
    /// Cross-sectional area, m².
    pub area: f64,
    pub atom_number: f64,
}

impl SampleGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("length", self.length), ("area", self.area), ("atom_number", self.atom_number)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sample {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Uniform magnetic field in the x-z plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MagneticField {
    pub gauss: f64,
    /// Angle from the propagation (z) axis, rad.
    pub theta: f64,
}

impl MagneticField {
    pub fn new(gauss: f64, theta: f64) -> Result<Self> {
        if !(gauss >= 0.0 && gauss.is_finite()) {
            return Err(Error::Config(format!("field magnitude {gauss} G is invalid")));
        }
        if !(-1e-12..=PI / 2.0 + 1e-12).contains(&theta) {
            return Err(Error::Config(format!("theta = {theta} rad outside [0, π/2]")));
        }
        Ok(MagneticField { gauss, theta })
    }

    pub fn zero() -> Self {
        MagneticField { gauss: 0.0, theta: 0.0 }
    }

    /// Field giving Larmor period `period` (s) for a level with Landé factor `g_g`.
    pub fn from_larmor_period(period: f64, g_g: f64, theta: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Config(format!("Larmor period {period} s is invalid")));
        }
        if g_g == 0.0 {
            return Err(Error::Config("Larmor period undefined for g_g = 0".into()));
        }
        let omega_b = TAU / (g_g.abs() * period);
        MagneticField::new(omega_b / MU_B_OVER_HBAR_PER_GAUSS, theta)
    }

    /// Ω_B = μ_B B/ℏ, rad/s.
    pub fn omega_b(&self) -> f64 {
        MU_B_OVER_HBAR_PER_GAUSS * self.gauss
    }

    /// T_L = 2πℏ/|g_g μ_B B|; infinite at zero field.
    pub fn larmor_period(&self, g_g: f64) -> f64 {
        let w = (g_g * self.omega_b()).abs();
        if w == 0.0 {
            f64::INFINITY
        } else {
            TAU / w
        }
    }
}

/// Result of the unconnected-lambda check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    /// Signal-coupled g sublevels whose excited partner has no control coupling.
    pub orphaned: Vec<HalfInt>,
}

impl FeasibilityReport {
    pub fn is_ok(&self) -> bool {
        self.orphaned.is_empty()
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            let list: Vec<String> = self.orphaned.iter().map(|m| m.to_string()).collect();
            write!(f, "unconnected lambda configuration for m = {}", list.join(", "))
        }
    }
}

/// C_{mα} = ⟨F_g m; 1 α | F_e m+α⟩, zero when m+α lies outside e.
pub fn signal_cg(scheme: &LevelScheme, pol: &FieldPolarizations, m: HalfInt) -> f64 {
    transition_cg(scheme.f_g, scheme.f_e, m, pol.alpha_h())
}

/// C′_{m′β} = ⟨F_g′ m′; 1 β | F_e m′+β⟩, zero outside the level ranges.
pub fn control_cg(scheme: &LevelScheme, pol: &FieldPolarizations, mp: HalfInt) -> f64 {
    transition_cg(scheme.f_gp, scheme.f_e, mp, pol.beta_h())
}

fn transition_cg(f_lower: HalfInt, f_e: HalfInt, m: HalfInt, q: HalfInt) -> f64 {
    if m.index_in(f_lower).is_none() || (m + q).index_in(f_e).is_none() {
        return 0.0;
    }
    clebsch_gordan(f_lower, HalfInt::integer(1), f_e, m, q, m + q).unwrap_or(0.0)
}

/// Coefficients below this magnitude are treated as exact zeros.
const CG_ZERO: f64 = 1e-12;

pub fn check_eit_feasibility(scheme: &LevelScheme, pol: &FieldPolarizations) -> FeasibilityReport {
    let orphaned = scheme
        .f_g
        .projections()
        .filter(|&m| {
            signal_cg(scheme, pol, m).abs() > CG_ZERO
                && control_cg(scheme, pol, m + pol.shift()).abs() <= CG_ZERO
        })
        .collect();
    FeasibilityReport { orphaned }
}

/// Clebsch-Gordan tables of a feasible scheme.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingTables {
    pub f_g: HalfInt,
    pub f_gp: HalfInt,
    pub pol: FieldPolarizations,
    /// C_{mα} for m = −F_g..F_g.
    pub c: Vec<f64>,
    /// C′_{m′β} for m′ = −F_g′..F_g′.
    pub cp: Vec<f64>,
    /// R_{mα}(β) = C_{mα}/C′_{m+α−β,β}; zero where C_{mα} = 0.
    pub r: Vec<f64>,
    /// X_{mα} = C_{mα}/√(Σ C²).
    pub x: Vec<f64>,
    /// C′_{m+α−β,β} for m = −F_g..F_g, the control coupling of each lambda.
    pub cp_lambda: Vec<f64>,
}

impl CouplingTables {
    pub fn sum_c_sq(&self) -> f64 {
        self.c.iter().map(|c| c * c).sum()
    }

    pub fn sum_r_sq(&self) -> f64 {
        self.r.iter().map(|r| r * r).sum()
    }

    /// Index in the g′ list of the spin-wave partner m+α−β of g sublevel `k`.
    pub fn partner_index(&self, k: usize) -> Option<usize> {
        let m = HalfInt::from_twice(2 * k as i32 - self.f_g.twice());
        (m + self.pol.shift()).index_in(self.f_gp)
    }
}

pub fn build_coupling_tables(scheme: &LevelScheme, pol: &FieldPolarizations) -> Result<CouplingTables> {
    scheme.validate()?;
    let report = check_eit_feasibility(scheme, pol);
    if !report.is_ok() {
        return Err(Error::Infeasible(report));
    }
    let c: Vec<f64> = scheme.f_g.projections().map(|m| signal_cg(scheme, pol, m)).collect();
    let cp: Vec<f64> = scheme.f_gp.projections().map(|m| control_cg(scheme, pol, m)).collect();
    let cp_lambda: Vec<f64> =
        scheme.f_g.projections().map(|m| control_cg(scheme, pol, m + pol.shift())).collect();
    let r =
        c.iter().zip(&cp_lambda).map(|(&cm, &cpm)| if cm.abs() > CG_ZERO { cm / cpm } else { 0.0 }).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let x = c.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect();
    Ok(CouplingTables { f_g: scheme.f_g, f_gp: scheme.f_gp, pol: *pol, c, cp, r, x, cp_lambda })
}

/// d_α = 6πη (N/A)(c/ω_e)² p Σ_m C²_{mα}.
pub fn optical_thickness(scheme: &LevelScheme, geometry: &SampleGeometry, tables: &CouplingTables) -> f64 {
    let lambda_bar = SPEED_OF_LIGHT / scheme.omega_e;
    6.0 * PI * scheme.eta * geometry.atom_number / geometry.area
        * lambda_bar
        * lambda_bar
        * scheme.p()
        * tables.sum_c_sq()
}

/// N|κ|² giving resonant intensity transmittance e^{−d_α} without control:
/// d_α c Γ_e / (4 L p Σ_m C²_{mα}).
pub fn calibrate_coupling(
    d_alpha: f64,
    scheme: &LevelScheme,
    length: f64,
    tables: &CouplingTables,
) -> Result<f64> {
    if !(d_alpha >= 0.0 && d_alpha.is_finite()) {
        return Err(Error::Config(format!("optical thickness {d_alpha} is invalid")));
    }
    if !(length > 0.0) {
        return Err(Error::Config(format!("sample length {length} is invalid")));
    }
    let s = tables.sum_c_sq();
    if s <= CG_ZERO {
        return Err(Error::Config("signal transition has no allowed components".into()));
    }
    Ok(d_alpha * SPEED_OF_LIGHT * scheme.gamma_e / (4.0 * length * scheme.p() * s))
}
