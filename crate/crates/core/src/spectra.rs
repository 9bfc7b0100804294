//! Steady-state EIT response for a constant control field.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::scheme::{CouplingTables, LevelScheme};

/// Linear susceptibility χ_α(Δ) of the signal for control Rabi frequency
/// `omega` and detuning `delta` (both rad/s) in a sample of length `length`.
///
/// Each Zeeman lambda contributes
/// Γ Δ X² (W − Δ² + iΔΓ/2) / ((W − Δ²)² + (ΔΓ/2)²) with W = Ω²C′²;
/// lambdas with W = 0 are evaluated in their reduced two-level form so the
/// Δ → 0 limit is finite.
pub fn susceptibility(
    scheme: &LevelScheme,
    tables: &CouplingTables,
    d_alpha: f64,
    length: f64,
    omega: f64,
    delta: f64,
) -> Complex64 {
    let gamma = scheme.gamma_e;
    let prefactor = SPEED_OF_LIGHT * d_alpha / (2.0 * scheme.omega_e * length);
    let mut sum = Complex64::new(0.0, 0.0);
    for (&x, &cp) in tables.x.iter().zip(&tables.cp_lambda) {
        if x == 0.0 {
            continue;
        }
        let w = omega * omega * cp * cp;
        let term = if w == 0.0 {
            Complex64::new(-delta, 0.5 * gamma) * (gamma * x * x) / (delta * delta + 0.25 * gamma * gamma)
        } else {
            let a = w - delta * delta;
            let b = 0.5 * delta * gamma;
            Complex64::new(a, b) * (gamma * delta * x * x) / (a * a + b * b)
        };
        sum += term;
    }
    prefactor * sum
}

/// Intensity transmittance exp(−(ω_e/c) Im χ L).
pub fn transmittance(scheme: &LevelScheme, chi: Complex64, length: f64) -> f64 {
    (-(scheme.omega_e / SPEED_OF_LIGHT) * chi.im * length).exp()
}

/// v_g = cΩ²/(Ω² + Np|κ|² Σ_m R²_{mα}(β)); `coupling` is N|κ|².
pub fn group_velocity(tables: &CouplingTables, p: f64, coupling: f64, omega: f64) -> f64 {
    let medium = coupling * p * tables.sum_r_sq();
    if medium == 0.0 {
        return SPEED_OF_LIGHT;
    }
    SPEED_OF_LIGHT * omega * omega / (omega * omega + medium)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SusceptibilityResult {
    pub omega: f64,
    pub detuning: Vec<f64>,
    pub chi: Vec<Complex64>,
    pub transmittance: Vec<f64>,
}

impl SusceptibilityResult {
    /// Width of the detuning interval around Δ = 0 in which the
    /// transmittance stays above `level`, found by walking outward on the grid.
    pub fn window_width(&self, level: f64) -> f64 {
        let centre = self
            .detuning
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if self.transmittance[centre] <= level {
            return 0.0;
        }
        let mut hi = centre;
        while hi + 1 < self.detuning.len() && self.transmittance[hi + 1] > level {
            hi += 1;
        }
        let mut lo = centre;
        while lo > 0 && self.transmittance[lo - 1] > level {
            lo -= 1;
        }
        self.detuning[hi] - self.detuning[lo]
    }
}

/// Uniform inclusive detuning grid `[lo, hi]` with `n_points` samples.
pub fn transparency_scan(
    scheme: &LevelScheme,
    tables: &CouplingTables,
    d_alpha: f64,
    length: f64,
    omega: f64,
    range: (f64, f64),
    n_points: usize,
) -> Result<SusceptibilityResult> {
    if n_points < 2 {
        return Err(Error::Config(format!("scan needs at least 2 points, got {n_points}")));
    }
    if omega < 0.0 || !omega.is_finite() {
        return Err(Error::Config(format!("Rabi frequency {omega} is invalid")));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::Config(format!("detuning range [{lo}, {hi}] is invalid")));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let detuning: Vec<f64> =
        (0..n_points).map(|i| if i + 1 == n_points { hi } else { lo + step * i as f64 }).collect();
    let chi: Vec<Complex64> = detuning
        .par_iter()
        .map(|&delta| susceptibility(scheme, tables, d_alpha, length, omega, delta))
        .collect();
    let transmittance = chi.iter().map(|&c| transmittance(scheme, c, length)).collect();
    Ok(SusceptibilityResult { omega, detuning, chi, transmittance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angmom::HalfInt;
    use crate::scheme::{build_coupling_tables, FieldPolarizations};

    const L: f64 = 3e-3;

    fn rb() -> (LevelScheme, CouplingTables) {
        let s = LevelScheme::rb85_d1();
        let t = build_coupling_tables(&s, &FieldPolarizations::new(1, 1).unwrap()).unwrap();
        (s, t)
    }

    #[test]
    fn zero_at_resonance_with_control() {
        let (s, t) = rb();
        let chi = susceptibility(&s, &t, 8.0, L, 1.5 * s.gamma_e, 0.0);
        assert_eq!(chi, Complex64::new(0.0, 0.0));
        assert_eq!(transmittance(&s, chi, L), 1.0);
    }

    #[test]
    fn resonant_absorption_without_control() {
        // Δ → 0, Ω = 0: χ = i c d/(ω_e L), transmittance e^{−d}.
        let (s, t) = rb();
        for d in [1.0, 4.0, 8.0] {
            let chi = susceptibility(&s, &t, d, L, 0.0, 0.0);
            let want = SPEED_OF_LIGHT * d / (s.omega_e * L);
            assert!(chi.re.abs() < 1e-20);
            assert!((chi.im - want).abs() / want < 1e-14);
            assert!((transmittance(&s, chi, L) - (-d).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn odd_parity_in_detuning() {
        let (s, t) = rb();
        for omega in [0.0, 0.7 * s.gamma_e, 1.5 * s.gamma_e] {
            for delta in [0.01, 0.3, 1.0, 4.0].map(|x| x * s.gamma_e) {
                let a = susceptibility(&s, &t, 8.0, L, omega, delta);
                let b = susceptibility(&s, &t, 8.0, L, omega, -delta);
                assert!((a + b.conj()).norm() <= 1e-13 * a.norm());
            }
        }
    }

    #[test]
    fn passive_medium() {
        let (s, t) = rb();
        for omega in [0.0, 0.5, 1.5, 3.0].map(|x| x * s.gamma_e) {
            let scan =
                transparency_scan(&s, &t, 8.0, L, omega, (-5.0 * s.gamma_e, 5.0 * s.gamma_e), 2001).unwrap();
            assert!(scan.chi.iter().all(|c| c.im >= -1e-12));
            assert!(scan.transmittance.iter().all(|&x| (0.0..=1.0 + 1e-9).contains(&x)));
        }
    }

    #[test]
    fn scan_grid_and_resonance() {
        let (s, t) = rb();
        let g = s.gamma_e;
        let scan = transparency_scan(&s, &t, 8.0, L, 1.5 * g, (-2.0 * g, 2.0 * g), 401).unwrap();
        assert_eq!(scan.detuning.len(), 401);
        assert_eq!(scan.detuning[0], -2.0 * g);
        assert_eq!(scan.detuning[400], 2.0 * g);
        assert_eq!(scan.transmittance[200], 1.0);
        assert!(transparency_scan(&s, &t, 8.0, L, g, (-g, g), 1).is_err());
    }

    #[test]
    fn absorption_dip_without_control() {
        let (s, t) = rb();
        let g = s.gamma_e;
        // Grid with an even number of points straddles Δ = 0.
        let scan = transparency_scan(&s, &t, 8.0, L, 0.0, (-g, g), 20_000).unwrap();
        let min = scan.transmittance.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - (-8.0f64).exp()).abs() / (-8.0f64).exp() < 0.01);
    }

    #[test]
    fn window_widens_with_control() {
        let (s, t) = rb();
        let g = s.gamma_e;
        let widths: Vec<f64> = [0.5, 1.0, 1.5]
            .iter()
            .map(|&w| {
                transparency_scan(&s, &t, 8.0, L, w * g, (-3.0 * g, 3.0 * g), 6001).unwrap().window_width(0.5)
            })
            .collect();
        assert!(widths[0] > 0.0);
        assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
    }

    #[test]
    fn nondegenerate_lambda_matches_three_level_formula() {
        let s = LevelScheme {
            f_g: HalfInt::ZERO,
            f_gp: HalfInt::ZERO,
            f_e: HalfInt::integer(1),
            ..LevelScheme::rb85_d1()
        };
        let t = build_coupling_tables(&s, &FieldPolarizations::new(1, 1).unwrap()).unwrap();
        let g = s.gamma_e;
        let d = 5.0;
        for omega in [0.0, 0.4 * g, 2.0 * g] {
            for delta in [-3.0, -0.2, 0.05, 0.9, 2.5].map(|x| x * g) {
                // χ = (c d/ω_e L)(iΓ/2)/(Γ/2 − iΔ + iΩ²/Δ)
                let denom = Complex64::new(0.5 * g, -delta + omega * omega / delta);
                let want = SPEED_OF_LIGHT * d / (s.omega_e * L) * Complex64::new(0.0, 0.5 * g) / denom;
                let got = susceptibility(&s, &t, d, L, omega, delta);
                assert!((got - want).norm() <= 1e-10 * want.norm());
            }
        }
    }

    #[test]
    fn group_velocity_limits() {
        let (s, t) = rb();
        let coupling = crate::scheme::calibrate_coupling(8.0, &s, L, &t).unwrap();
        assert_eq!(group_velocity(&t, s.p(), coupling, 0.0), 0.0);
        let fast = group_velocity(&t, s.p(), coupling, 1e6 * s.gamma_e);
        assert!((fast - SPEED_OF_LIGHT).abs() / SPEED_OF_LIGHT < 1e-6);
        let mut prev = 0.0;
        for k in 1..50 {
            let v = group_velocity(&t, s.p(), coupling, 0.1 * k as f64 * s.gamma_e);
            assert!(v > prev && v <= SPEED_OF_LIGHT);
            prev = v;
        }
    }

    #[test]
    fn group_delay_matches_dispersion_slope() {
        // L/v_g − L/c equals L/c · (ω_e/2) dRe χ/dΔ at Δ = 0.
        let (s, t) = rb();
        let coupling = crate::scheme::calibrate_coupling(8.0, &s, L, &t).unwrap();
        let omega = 1.5 * s.gamma_e;
        let vg = group_velocity(&t, s.p(), coupling, omega);
        let delay = L / vg - L / SPEED_OF_LIGHT;
        let h = 1e-4 * s.gamma_e;
        let slope = (susceptibility(&s, &t, 8.0, L, omega, h).re
            - susceptibility(&s, &t, 8.0, L, omega, -h).re)
            / (2.0 * h);
        let from_chi = L / SPEED_OF_LIGHT * 0.5 * s.omega_e * slope;
        assert!((delay - from_chi).abs() / delay < 1e-6, "{delay} vs {from_chi}");
    }
}
