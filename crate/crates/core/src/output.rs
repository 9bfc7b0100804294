//! CSV and JSON emitters. Numbers are written with nine significant digits
//! in scientific notation so identical runs give identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{DerivedQuantities, ExperimentConfig};
use crate::dynamics::{Protocol, SimulationRecord};
use crate::error::Result;
use crate::polariton::RevivalSurface;
use crate::spectra::SusceptibilityResult;

pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn row(out: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|&v| num(v)).collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// `t_s, omega_rabi, intensity_transmittance, p_D, p_B` at the observation
/// point, with p_D and p_B scaled so that the peak p_D is 1.
pub fn timeseries_csv(record: &SimulationRecord) -> String {
    let peak = record.peak_local_p_d();
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let mut out = String::from("t_s,omega_rabi,intensity_transmittance,p_D,p_B\n");
    for s in &record.samples {
        row(&mut out, &[s.t, s.omega, s.transmittance, s.local.p_d * scale, s.local.p_b * scale]);
    }
    out
}

/// z-averaged p_D and p_B, scaled so that their peak p_D is 1.
pub fn integrated_csv(record: &SimulationRecord) -> String {
    let peak = record.samples.iter().map(|s| s.integrated.p_d).fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let mut out = String::from("t_s,p_D,p_B\n");
    for s in &record.samples {
        row(&mut out, &[s.t, s.integrated.p_d * scale, s.integrated.p_b * scale]);
    }
    out
}

#[derive(Serialize)]
pub struct ConfigEcho<'a> {
    pub input: &'a ExperimentConfig,
    pub resolved: &'a Protocol,
    pub derived: &'a DerivedQuantities,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
pub struct Summary<'a> {
    /// Energies in units of the peak input intensity × seconds.
    pub E_in: f64,
    pub E_leaked: f64,
    pub E_retrieved: f64,
    pub efficiency: f64,
    pub analytic_storage_interval_s: Option<(f64, f64)>,
    pub config_echo: ConfigEcho<'a>,
}

pub fn summary_json(record: &SimulationRecord, echo: ConfigEcho<'_>) -> Result<String> {
    let summary = Summary {
        E_in: record.e_in,
        E_leaked: record.e_leaked,
        E_retrieved: record.e_retrieved,
        efficiency: record.efficiency(),
        analytic_storage_interval_s: record.analytic_interval,
        config_echo: echo,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    Ok(text)
}

pub fn spectrum_csv(scan: &SusceptibilityResult) -> String {
    let mut out = String::from("delta_rad_s,re_chi,im_chi,transmittance\n");
    for ((d, c), t) in scan.detuning.iter().zip(&scan.chi).zip(&scan.transmittance) {
        row(&mut out, &[*d, c.re, c.im, *t]);
    }
    out
}

/// One row per storage time; first column t_s/T_L, then one column per θ.
pub fn surface_csv(surface: &RevivalSurface) -> String {
    let mut out = String::from("t_over_TL");
    for th in &surface.thetas {
        let _ = write!(out, ",{}", num(*th));
    }
    out.push('\n');
    for (t, vals) in surface.times.iter().zip(&surface.values) {
        let mut cells = vec![t / surface.larmor_period];
        cells.extend_from_slice(vals);
        row(&mut out, &cells);
    }
    out
}

/// `t_over_TL, f` for column `j` of a surface.
pub fn curve_csv(surface: &RevivalSurface, j: usize) -> String {
    let mut out = String::from("t_over_TL,f\n");
    for (t, vals) in surface.times.iter().zip(&surface.values) {
        row(&mut out, &[t / surface.larmor_period, vals[j]]);
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(0.043_8), "4.38000000e-2");
        assert_eq!(num(-1.0 / 3.0), "-3.33333333e-1");
        assert_eq!(num(0.0), "0.00000000e0");
    }

    #[test]
    fn surface_layout() {
        let s = RevivalSurface {
            thetas: vec![0.0, 1.0],
            times: vec![0.0, 4e-6],
            larmor_period: 8e-6,
            values: vec![vec![1.0, 1.0], vec![0.5, 0.25]],
        };
        let text = surface_csv(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t_over_TL,0.00000000e0,1.00000000e0");
        assert_eq!(lines[2], "5.00000000e-1,5.00000000e-1,2.50000000e-1");
        assert_eq!(curve_csv(&s, 1).lines().nth(2), Some("5.00000000e-1,2.50000000e-1"));
    }
}
