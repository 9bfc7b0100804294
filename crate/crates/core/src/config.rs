//! JSON experiment description and its conversion to SI quantities.
//!
//! Every key carries its unit in its name; unknown keys are rejected.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::angmom::HalfInt;
use crate::constants::SPEED_OF_LIGHT;
use crate::dynamics::{ControlEnvelope, Grid, Protocol, SignalEnvelope};
use crate::error::{Error, Result};
use crate::scheme::{
    build_coupling_tables, calibrate_coupling, check_eit_feasibility, optical_thickness, FeasibilityReport,
    FieldPolarizations, LevelScheme, MagneticField, SampleGeometry,
};
use crate::spectra::group_velocity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeSpec,
    pub polarizations: PolarizationSpec,
    pub sample: SampleSpec,
    pub control: ControlSpec,
    pub signal: SignalSpec,
    pub bfield: FieldSpec,
    #[serde(default)]
    pub grid: GridSpec,
    /// Where p_D and p_B are recorded, as a fraction of the sample length.
    #[serde(default = "default_observation_z")]
    pub observation_z: f64,
    #[serde(default = "default_true")]
    pub analytic_storage: bool,
}

/// Nanoseconds to seconds, correctly rounded.
fn ns(t: f64) -> f64 {
    t / 1e9
}

fn default_observation_z() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

/// Either a named preset with optional overrides, or every field given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_g: Option<HalfInt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_gp: Option<HalfInt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_e: Option<HalfInt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_gp_over_2pi_ghz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_e_over_2pi_thz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_e_over_2pi_mhz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_gp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl SchemeSpec {
    pub fn rb85_d1() -> Self {
        SchemeSpec { preset: Some("rb85_d1".into()), ..Default::default() }
    }

    pub fn resolve(&self) -> Result<LevelScheme> {
        let base = match self.preset.as_deref() {
            None => None,
            Some("rb85_d1") => Some(LevelScheme::rb85_d1()),
            Some(other) => {
                return Err(Error::Config(format!("unknown scheme preset `{other}`; known: rb85_d1")))
            }
        };
        fn pick<T: Copy>(v: Option<T>, fallback: Option<T>, key: &str) -> Result<T> {
            v.or(fallback)
                .ok_or_else(|| Error::Config(format!("scheme: missing field `{key}` (or give a preset)")))
        }
        let b = base.as_ref();
        let scheme = LevelScheme {
            f_g: pick(self.f_g, b.map(|s| s.f_g), "f_g")?,
            f_gp: pick(self.f_gp, b.map(|s| s.f_gp), "f_gp")?,
            f_e: pick(self.f_e, b.map(|s| s.f_e), "f_e")?,
            omega_gp: TAU
                * 1e9
                * pick(
                    self.omega_gp_over_2pi_ghz,
                    b.map(|s| s.omega_gp / TAU / 1e9),
                    "omega_gp_over_2pi_ghz",
                )?,
            omega_e: TAU
                * 1e12
                * pick(self.omega_e_over_2pi_thz, b.map(|s| s.omega_e / TAU / 1e12), "omega_e_over_2pi_thz")?,
            gamma_e: TAU
                * 1e6
                * pick(self.gamma_e_over_2pi_mhz, b.map(|s| s.gamma_e / TAU / 1e6), "gamma_e_over_2pi_mhz")?,
            g_g: pick(self.g_g, b.map(|s| s.g_g), "g_g")?,
            g_gp: pick(self.g_gp, b.map(|s| s.g_gp), "g_gp")?,
            g_e: pick(self.g_e, b.map(|s| s.g_e), "g_e")?,
            eta: pick(self.eta, b.map(|s| s.eta), "eta")?,
        };
        // Presets are stored exactly; only user overrides go through the unit conversion.
        let scheme = match base {
            Some(p) => LevelScheme {
                omega_gp: if self.omega_gp_over_2pi_ghz.is_some() { scheme.omega_gp } else { p.omega_gp },
                omega_e: if self.omega_e_over_2pi_thz.is_some() { scheme.omega_e } else { p.omega_e },
                gamma_e: if self.gamma_e_over_2pi_mhz.is_some() { scheme.gamma_e } else { p.gamma_e },
                ..scheme
            },
            None => scheme,
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationSpec {
    pub alpha: i32,
    pub beta: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub length_m: f64,
    /// d_α directly; alternatively give `area_m2` and `atom_number`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical_thickness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_m2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_number: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub rabi_over_gamma: f64,
    #[serde(default)]
    pub ramp_ns: f64,
    /// Start of the switch-off ramp; omit to keep the control on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_off_ns: Option<f64>,
    /// Start of the switch-on ramp; omit to leave the control off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_on_ns: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Gaussian {
        /// Intensity full width at half maximum.
        fwhm_ns: f64,
        /// Time at which the peak enters the sample.
        peak_ns: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    Continuous {
        start_ns: f64,
        #[serde(default)]
        rise_ns: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_amplitude() -> f64 {
    1.0
}

/// When the magnetic field acts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSchedule {
    #[default]
    Always,
    /// Only between the end of the switch-off ramp and the start of the switch-on ramp.
    Storage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss: Option<f64>,
    /// Larmor period of the g level, as an alternative to `gauss`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub larmor_period_us: Option<f64>,
    #[serde(default)]
    pub theta_rad: f64,
    #[serde(default)]
    pub during: FieldSchedule,
}

impl FieldSpec {
    pub fn resolve(&self, scheme: &LevelScheme) -> Result<MagneticField> {
        self.resolve_at(scheme, self.theta_rad)
    }

    pub fn resolve_at(&self, scheme: &LevelScheme, theta: f64) -> Result<MagneticField> {
        match (self.gauss, self.larmor_period_us) {
            (Some(g), None) => MagneticField::new(g, theta),
            (None, Some(t)) => MagneticField::from_larmor_period(t / 1e6, scheme.g_g, theta),
            (Some(_), Some(_)) => {
                Err(Error::Config("bfield: give either `gauss` or `larmor_period_us`, not both".into()))
            }
            (None, None) => Err(Error::Config("bfield: missing field `gauss` or `larmor_period_us`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_nz")]
    pub nz: usize,
    #[serde(default = "default_dt_ns")]
    pub dt_ns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end_ns: Option<f64>,
}

fn default_nz() -> usize {
    200
}

fn default_dt_ns() -> f64 {
    0.25
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nz: default_nz(), dt_ns: default_dt_ns(), t_start_ns: None, t_end_ns: None }
    }
}

/// Quantities derived from a configuration, reported by `check` and echoed
/// in simulation summaries.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedQuantities {
    pub optical_thickness: f64,
    /// N|κ|², s⁻¹ m⁻¹ in the units of the envelope equations.
    pub coupling: f64,
    pub rabi_rad_s: f64,
    pub group_velocity_m_s: f64,
    pub group_delay_s: f64,
    pub field_gauss: f64,
    pub larmor_period_s: f64,
    pub dt_limit_s: f64,
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub protocol: Protocol,
    pub derived: DerivedQuantities,
    pub feasibility: FeasibilityReport,
}

/// CLI overrides applied on top of a file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub gauss: Option<f64>,
    pub larmor_period_us: Option<f64>,
    pub storage_us: Option<f64>,
    pub nz: Option<usize>,
    pub dt_ns: Option<f64>,
    pub theta_rad: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The store-and-retrieve run of the reference experiment: d = 8,
    /// Ω = 1.5Γ, 120 ns pulse peaking at −60 ns, 3 mm sample, control ramped
    /// off over the 20 ns before t = 0 and back on at t = 2 μs.
    pub fn reference(larmor_period_us: f64) -> Self {
        ExperimentConfig {
            scheme: SchemeSpec::rb85_d1(),
            polarizations: PolarizationSpec { alpha: 1, beta: 1 },
            sample: SampleSpec {
                length_m: 3e-3,
                optical_thickness: Some(8.0),
                area_m2: None,
                atom_number: None,
            },
            control: ControlSpec {
                rabi_over_gamma: 1.5,
                ramp_ns: 20.0,
                t_off_ns: Some(-20.0),
                t_on_ns: Some(2000.0),
            },
            signal: SignalSpec::Gaussian { fwhm_ns: 120.0, peak_ns: -60.0, amplitude: 1.0 },
            bfield: FieldSpec {
                gauss: None,
                larmor_period_us: Some(larmor_period_us),
                theta_rad: 0.0,
                during: FieldSchedule::Storage,
            },
            grid: GridSpec::default(),
            observation_z: 0.5,
            analytic_storage: true,
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        match (o.gauss, o.larmor_period_us) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("--b-gauss and --larmor-period-us are mutually exclusive".into()))
            }
            (Some(g), None) => {
                self.bfield.gauss = Some(g);
                self.bfield.larmor_period_us = None;
            }
            (None, Some(t)) => {
                self.bfield.larmor_period_us = Some(t);
                self.bfield.gauss = None;
            }
            (None, None) => {}
        }
        if let Some(theta) = o.theta_rad {
            self.bfield.theta_rad = theta;
        }
        if let Some(s) = o.storage_us {
            let off = self
                .control
                .t_off_ns
                .ok_or_else(|| Error::Config("--storage-us needs control.t_off_ns".into()))?;
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("storage time {s} μs is invalid")));
            }
            self.control.t_on_ns = Some(off + self.control.ramp_ns + s * 1e3);
        }
        if let Some(nz) = o.nz {
            self.grid.nz = nz;
        }
        if let Some(dt) = o.dt_ns {
            self.grid.dt_ns = dt;
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let scheme = self.scheme.resolve()?;
        let pol = FieldPolarizations::new(self.polarizations.alpha, self.polarizations.beta)?;
        let feasibility = check_eit_feasibility(&scheme, &pol);
        let tables = build_coupling_tables(&scheme, &pol)?;

        let s = &self.sample;
        let d_alpha = match (s.optical_thickness, s.area_m2, s.atom_number) {
            (Some(d), None, None) => d,
            (None, Some(area), Some(n)) => {
                let geometry = SampleGeometry { length: s.length_m, area, atom_number: n };
                geometry.validate()?;
                optical_thickness(&scheme, &geometry, &tables)
            }
            (None, _, _) => {
                return Err(Error::Config(
                    "sample: missing field `optical_thickness` (or both `area_m2` and `atom_number`)".into(),
                ))
            }
            (Some(_), _, _) => {
                return Err(Error::Config(
                    "sample: give `optical_thickness` or `area_m2` + `atom_number`, not both".into(),
                ))
            }
        };
        let coupling = calibrate_coupling(d_alpha, &scheme, s.length_m, &tables)?;

        let field = self.bfield.resolve(&scheme)?;
        let c = &self.control;
        let control = ControlEnvelope {
            omega_on: c.rabi_over_gamma * scheme.gamma_e,
            ramp: ns(c.ramp_ns),
            t_off: c.t_off_ns.map(ns),
            t_on: c.t_on_ns.map(ns),
        };
        let field_window = match self.bfield.during {
            FieldSchedule::Always => None,
            FieldSchedule::Storage => match (control.t_off, control.t_on) {
                (Some(off), Some(on)) => Some((off + control.ramp, on)),
                _ => {
                    return Err(Error::Config(
                        "bfield.during = storage needs control.t_off_ns and control.t_on_ns".into(),
                    ))
                }
            },
        };
        let signal = match self.signal {
            SignalSpec::Gaussian { fwhm_ns, peak_ns, amplitude } => {
                SignalEnvelope::Gaussian { fwhm: ns(fwhm_ns), peak_time: ns(peak_ns), amplitude }
            }
            SignalSpec::Continuous { start_ns, rise_ns, amplitude } => {
                SignalEnvelope::Continuous { start: ns(start_ns), rise: ns(rise_ns), amplitude }
            }
        };
        let grid = Grid {
            nz: self.grid.nz,
            dt: ns(self.grid.dt_ns),
            t_start: self.grid.t_start_ns.map(ns),
            t_end: self.grid.t_end_ns.map(ns),
        };
        let protocol = Protocol {
            scheme: scheme.clone(),
            pol,
            length: s.length_m,
            d_alpha,
            control,
            signal,
            field,
            field_window,
            grid,
            observation_z: self.observation_z,
            analytic_storage: self.analytic_storage,
        };
        let vg = group_velocity(&tables, scheme.p(), coupling, protocol.control.omega_on);
        let derived = DerivedQuantities {
            optical_thickness: d_alpha,
            coupling,
            rabi_rad_s: protocol.control.omega_on,
            group_velocity_m_s: vg,
            group_delay_s: s.length_m / vg - s.length_m / SPEED_OF_LIGHT,
            field_gauss: field.gauss,
            larmor_period_s: field.larmor_period(scheme.g_g),
            dt_limit_s: protocol.dt_limit(),
        };
        Ok(Resolved { protocol, derived, feasibility })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scheme": {"preset": "rb85_d1"},
        "polarizations": {"alpha": 1, "beta": 1},
        "sample": {"length_m": 0.003, "optical_thickness": 8},
        "control": {"rabi_over_gamma": 1.5, "ramp_ns": 20, "t_off_ns": -20, "t_on_ns": 2000},
        "signal": {"shape": "gaussian", "fwhm_ns": 120, "peak_ns": -60},
        "bfield": {"gauss": 0.267}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let r = cfg.resolve().unwrap();
        assert!(r.feasibility.is_ok());
        assert_eq!(r.protocol.grid.nz, 200);
        assert_eq!(r.protocol.scheme, LevelScheme::rb85_d1());
        assert!((r.derived.larmor_period_s - 8e-6).abs() / 8e-6 < 5e-3);
        assert!(r.protocol.field_window.is_none());
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let bad = MINIMAL.replace("\"fwhm_ns\"", "\"fwhm\"");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("fwhm"), "{e}");

        let missing = MINIMAL.replace(r#""bfield": {"gauss": 0.267}"#, r#""bfield": {"theta_rad": 0.1}"#);
        let e = ExperimentConfig::from_json(&missing).unwrap().resolve().unwrap_err().to_string();
        assert!(e.contains("gauss"), "{e}");

        let no_sample = MINIMAL.replace(r#""sample": {"length_m": 0.003, "optical_thickness": 8},"#, "");
        let e = ExperimentConfig::from_json(&no_sample).unwrap_err().to_string();
        assert!(e.contains("sample"), "{e}");

        let explicit = MINIMAL.replace(r#"{"preset": "rb85_d1"}"#, r#"{"f_g": 2, "f_gp": 3}"#);
        let e = ExperimentConfig::from_json(&explicit).unwrap().resolve().unwrap_err().to_string();
        assert!(e.contains("f_e"), "{e}");
    }

    #[test]
    fn both_field_forms_rejected() {
        let cfg = MINIMAL.replace(r#"{"gauss": 0.267}"#, r#"{"gauss": 0.267, "larmor_period_us": 8}"#);
        let r = ExperimentConfig::from_json(&cfg).unwrap().resolve();
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn reference_round_trips_through_json() {
        let cfg = ExperimentConfig::reference(8.0);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.protocol.field_window, Some((0.0, 2e-6)));
        assert!((r.derived.larmor_period_s - 8e-6).abs() < 1e-15);
    }

    #[test]
    fn half_integer_levels_parse() {
        let text = MINIMAL.replace(
            r#"{"preset": "rb85_d1"}"#,
            r#"{"preset": "rb85_d1", "f_g": 0.5, "f_gp": 1.5, "f_e": 1.5, "g_g": -0.5, "g_gp": 0.5}"#,
        );
        let s = ExperimentConfig::from_json(&text).unwrap().scheme.resolve().unwrap();
        assert_eq!(s.f_g, HalfInt::from_twice(1));
        assert_eq!(s.f_e, HalfInt::from_twice(3));
        let bad = MINIMAL.replace(r#"{"preset": "rb85_d1"}"#, r#"{"preset": "rb85_d1", "f_g": 0.7}"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn geometry_gives_optical_thickness() {
        let text = MINIMAL.replace(r#""optical_thickness": 8"#, r#""area_m2": 1e-6, "atom_number": 1e9"#);
        let r = ExperimentConfig::from_json(&text).unwrap().resolve().unwrap();
        assert!(r.derived.optical_thickness > 0.0);
        let both = MINIMAL.replace(r#""optical_thickness": 8"#, r#""optical_thickness": 8, "area_m2": 1e-6"#);
        assert!(ExperimentConfig::from_json(&both).unwrap().resolve().is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::reference(8.0);
        cfg.apply(&Overrides {
            gauss: Some(0.535),
            storage_us: Some(1.0),
            nz: Some(50),
            ..Default::default()
        })
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.protocol.control.t_on, Some(1e-6));
        assert_eq!(r.protocol.field_window, Some((0.0, 1e-6)));
        assert_eq!(r.protocol.grid.nz, 50);
        assert_eq!(cfg.bfield.larmor_period_us, None);
        let both = Overrides { gauss: Some(1.0), larmor_period_us: Some(1.0), ..Default::default() };
        assert!(cfg.apply(&both).is_err());
    }

    #[test]
    fn infeasible_polarizations_reported() {
        let text = MINIMAL
            .replace(r#"{"preset": "rb85_d1"}"#, r#"{"preset": "rb85_d1", "f_g": 1, "f_gp": 1, "f_e": 1}"#)
            .replace(r#""beta": 1"#, r#""beta": -1"#);
        let r = ExperimentConfig::from_json(&text).unwrap().resolve();
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
