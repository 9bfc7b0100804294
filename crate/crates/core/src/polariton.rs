//! Dark/bright polariton bookkeeping and the analytic retrieval efficiency
//! of a spin wave stored in a magnetic field.
//!
//! The coherence vector lives in a (2F_g+2)-dimensional space spanned by the
//! signal field e_Φ and one spin-wave coherence e_m = Q^{g m}_{g′ m+α−β} per
//! ground sublevel. Hyperfine coherences outside that diagonal (generated
//! by precession in a tilted field) are accounted for separately as `p_out`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::angmom::{rotation_matrix, RotationMatrix};
use crate::error::{Error, Result};
use crate::scheme::{CouplingTables, LevelScheme, MagneticField};

/// Direction of the dark-state polariton in coherence-vector space.
///
/// Index 0 is e_Φ; index 1 + k is e_m for the k-th ground sublevel. The
/// atomic components carry the sign of the adiabatic dark state of the
/// propagation equations, u = Ω e_Φ − √(Np) κ Σ R_m e_m with κ real.
#[derive(Clone, Debug, PartialEq)]
pub struct PolaritonBasis {
    pub u: Vec<f64>,
    pub e: Vec<f64>,
}

impl PolaritonBasis {
    /// `coupling` is N|κ|², `p` the ground sublevel occupation.
    pub fn new(tables: &CouplingTables, omega: f64, coupling: f64, p: f64) -> Result<Self> {
        let atomic = (p * coupling).sqrt();
        let mut u = Vec::with_capacity(tables.r.len() + 1);
        u.push(omega);
        u.extend(tables.r.iter().map(|r| -atomic * r));
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::UndefinedBasis);
        }
        let e = u.iter().map(|x| x / norm).collect();
        Ok(PolaritonBasis { u, e })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PolaritonDecomposition {
    pub p_d: f64,
    pub p_b: f64,
    /// Weight of hyperfine coherences outside the spin-wave diagonal.
    pub p_out: f64,
    /// Squared norm of the coherence vector (field plus diagonal spin waves).
    pub v_norm_sq: f64,
}

impl PolaritonDecomposition {
    pub fn total(&self) -> f64 {
        self.v_norm_sq + self.p_out
    }
}

impl std::ops::Add for PolaritonDecomposition {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        PolaritonDecomposition {
            p_d: self.p_d + o.p_d,
            p_b: self.p_b + o.p_b,
            p_out: self.p_out + o.p_out,
            v_norm_sq: self.v_norm_sq + o.v_norm_sq,
        }
    }
}

/// Projects a coherence vector `v` onto the polariton basis.
pub fn decompose_vector(basis: &PolaritonBasis, v: &[Complex64]) -> PolaritonDecomposition {
    assert_eq!(basis.dim(), v.len(), "coherence vector has wrong dimension");
    let overlap: Complex64 = basis.e.iter().zip(v).map(|(e, x)| x * *e).sum();
    let p_b = basis.e.iter().zip(v).map(|(e, x)| (x - overlap * *e).norm_sqr()).sum();
    PolaritonDecomposition {
        p_d: overlap.norm_sqr(),
        p_b,
        p_out: 0.0,
        v_norm_sq: v.iter().map(|x| x.norm_sqr()).sum(),
    }
}

/// Decomposes the local state: field `phi` and the hyperfine coherence
/// matrix `spin` (row-major, F_g rows by F_g′ columns) in simulator units,
/// where spin amplitudes are N κ Q.
pub fn decompose(
    tables: &CouplingTables,
    phi: Complex64,
    spin: &[Complex64],
    omega: f64,
    coupling: f64,
    p: f64,
) -> Result<PolaritonDecomposition> {
    let basis = PolaritonBasis::new(tables, omega, coupling, p)?;
    Ok(decompose_with_basis(tables, &basis, phi, spin, coupling, p))
}

pub fn decompose_with_basis(
    tables: &CouplingTables,
    basis: &PolaritonBasis,
    phi: Complex64,
    spin: &[Complex64],
    coupling: f64,
    p: f64,
) -> PolaritonDecomposition {
    let ng = tables.f_g.multiplicity();
    let ngp = tables.f_gp.multiplicity();
    assert_eq!(spin.len(), ng * ngp, "spin matrix has wrong size");
    // v_m = √(N/p) Q = (NκQ)/√(p N|κ|²)
    let scale = if coupling > 0.0 { 1.0 / (p * coupling).sqrt() } else { 0.0 };
    let mut v = vec![Complex64::new(0.0, 0.0); ng + 1];
    v[0] = phi;
    let mut total_spin = 0.0;
    for k in 0..ng {
        if let Some(j) = tables.partner_index(k) {
            v[k + 1] = spin[k * ngp + j] * scale;
        }
        total_spin += spin[k * ngp..(k + 1) * ngp].iter().map(|x| x.norm_sqr()).sum::<f64>();
    }
    let mut out = decompose_vector(basis, &v);
    let diag: f64 = v[1..].iter().map(|x| x.norm_sqr()).sum();
    out.p_out = (total_spin * scale * scale - diag).max(0.0);
    out
}

/// Σ_{m1 m2} R_{m1} R_{m2}/ΣR² · D^(g)_{m2 m1} · D^(g′)†_{m1+α−β, m2+α−β}
fn dsp_overlap(tables: &CouplingTables, dg: &RotationMatrix, dgp: &RotationMatrix) -> Complex64 {
    let shift = tables.pol.shift();
    let norm = tables.sum_r_sq();
    let ms: Vec<_> = tables.f_g.projections().collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for (k1, &m1) in ms.iter().enumerate() {
        if tables.r[k1] == 0.0 {
            continue;
        }
        for (k2, &m2) in ms.iter().enumerate() {
            if tables.r[k2] == 0.0 {
                continue;
            }
            // (D†)_{a b} = conj(D_{b a})
            let dgp_dag = dgp.get(m2 + shift, m1 + shift).conj();
            acc += dg.get(m2, m1) * dgp_dag * (tables.r[k1] * tables.r[k2]);
        }
    }
    acc / norm
}

/// Retrieval efficiency f_α(t_s) for a field of magnitude `omega_b` (rad/s)
/// along an axis at angle `theta` from z in the x-z plane.
pub fn efficiency_for_axis(
    scheme: &LevelScheme,
    tables: &CouplingTables,
    omega_b: f64,
    theta: f64,
    t_s: f64,
) -> f64 {
    let dg = rotation_matrix(scheme.f_g, scheme.g_g, omega_b, theta, t_s);
    let dgp = rotation_matrix(scheme.f_gp, scheme.g_gp, omega_b, theta, t_s);
    dsp_overlap(tables, &dg, &dgp).norm_sqr()
}

pub fn efficiency(scheme: &LevelScheme, tables: &CouplingTables, field: &MagneticField, t_s: f64) -> f64 {
    efficiency_for_axis(scheme, tables, field.omega_b(), field.theta, t_s)
}

/// Half-Larmor-period efficiency for a transverse field and equal
/// helicities, (Σ_m R_m R_{−m} / Σ_m R_m²)².
pub fn transverse_half_period_efficiency(tables: &CouplingTables) -> Result<f64> {
    if tables.pol.alpha != tables.pol.beta {
        return Err(Error::Input("closed form requires equal signal and control helicities".into()));
    }
    let n = tables.r.len();
    let num: f64 = (0..n).map(|k| tables.r[k] * tables.r[n - 1 - k]).sum();
    Ok((num / tables.sum_r_sq()).powi(2))
}

/// Collapse rate η_α for a longitudinal field:
/// η² = 4 Σ_{m1,m2} R²_{m1} R²_{m2} (m1 − m2)² / (Σ_m R²_m)².
pub fn collapse_rate(tables: &CouplingTables) -> f64 {
    let norm = tables.sum_r_sq();
    let ms: Vec<f64> = tables.f_g.projections().map(|m| m.as_f64()).collect();
    let mut acc = 0.0;
    for (k1, m1) in ms.iter().enumerate() {
        for (k2, m2) in ms.iter().enumerate() {
            let w = (tables.r[k1] * tables.r[k2]).powi(2);
            acc += w * (m1 - m2).powi(2);
        }
    }
    (4.0 * acc / (norm * norm)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EfficiencyCurve {
    pub theta: f64,
    pub larmor_period: f64,
    /// (t_s in seconds, f)
    pub samples: Vec<(f64, f64)>,
}

pub fn efficiency_curve(
    scheme: &LevelScheme,
    tables: &CouplingTables,
    field: &MagneticField,
    times: &[f64],
) -> EfficiencyCurve {
    EfficiencyCurve {
        theta: field.theta,
        larmor_period: field.larmor_period(scheme.g_g),
        samples: times.iter().map(|&t| (t, efficiency(scheme, tables, field, t))).collect(),
    }
}

/// f on a (storage time × field angle) grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RevivalSurface {
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    pub larmor_period: f64,
    /// values[i][j] = f(times[i], thetas[j])
    pub values: Vec<Vec<f64>>,
}

pub fn revival_surface(
    scheme: &LevelScheme,
    tables: &CouplingTables,
    gauss: f64,
    thetas: &[f64],
    times: &[f64],
) -> Result<RevivalSurface> {
    if thetas.is_empty() || times.is_empty() {
        return Err(Error::Config("revival grid must be non-empty".into()));
    }
    let fields = thetas.iter().map(|&th| MagneticField::new(gauss, th)).collect::<Result<Vec<_>>>()?;
    let values = times
        .par_iter()
        .map(|&t| fields.iter().map(|b| efficiency(scheme, tables, b, t)).collect())
        .collect();
    Ok(RevivalSurface {
        thetas: thetas.to_vec(),
        times: times.to_vec(),
        larmor_period: fields[0].larmor_period(scheme.g_g),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angmom::HalfInt;
    use crate::scheme::{build_coupling_tables, FieldPolarizations};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn rb() -> (LevelScheme, CouplingTables) {
        let s = LevelScheme::rb85_d1();
        let t = build_coupling_tables(&s, &FieldPolarizations::new(1, 1).unwrap()).unwrap();
        (s, t)
    }

    fn field(s: &LevelScheme, theta: f64) -> MagneticField {
        MagneticField::from_larmor_period(8e-6, s.g_g, theta).unwrap()
    }

    #[test]
    fn parallel_and_orthogonal_vectors() {
        let (s, t) = rb();
        let basis = PolaritonBasis::new(&t, 1.5 * s.gamma_e, 1e20, s.p()).unwrap();
        let norm: f64 = basis.e.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-14);

        let v: Vec<Complex64> = basis.u.iter().map(|&x| Complex64::new(0.3, -1.1) * x).collect();
        let d = decompose_vector(&basis, &v);
        assert!(d.p_b <= 1e-12 * d.p_d);

        // orthogonal: move the field weight onto the atomic part
        let mut w = vec![Complex64::new(0.0, 0.0); basis.dim()];
        w[0] = Complex64::new(basis.e[1], 0.0);
        w[1] = Complex64::new(-basis.e[0], 0.0);
        let d = decompose_vector(&basis, &w);
        assert!(d.p_d < 1e-28);
        assert!((d.p_b - d.v_norm_sq).abs() < 1e-14);
    }

    #[test]
    fn undefined_basis() {
        let (_, t) = rb();
        assert!(matches!(PolaritonBasis::new(&t, 0.0, 0.0, 0.2), Err(Error::UndefinedBasis)));
    }

    #[test]
    fn decomposition_closes_norm() {
        let (s, t) = rb();
        let coupling = 3.7e19;
        let ng = 5;
        let ngp = 7;
        let spin: Vec<Complex64> = (0..ng * ngp)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()) * 1e9)
            .collect();
        let phi = Complex64::new(0.4, 0.2);
        let d = decompose(&t, phi, &spin, 0.8 * s.gamma_e, coupling, s.p()).unwrap();
        let total = phi.norm_sqr() + spin.iter().map(|x| x.norm_sqr()).sum::<f64>() / (s.p() * coupling);
        assert!((d.p_d + d.p_b - d.v_norm_sq).abs() < 1e-10 * d.v_norm_sq);
        assert!((d.p_d + d.p_b + d.p_out - total).abs() < 1e-10 * total);
    }

    #[test]
    fn zero_storage_is_unity() {
        let (s, t) = rb();
        for theta in [0.0, 0.3, FRAC_PI_4, FRAC_PI_2] {
            assert_eq!(efficiency(&s, &t, &field(&s, theta), 0.0), 1.0);
        }
    }

    #[test]
    fn longitudinal_revivals() {
        let (s, t) = rb();
        let b = field(&s, 0.0);
        let tl = 8e-6;
        assert!((efficiency(&s, &t, &b, tl / 2.0) - 1.0).abs() < 1e-10);
        assert!((efficiency(&s, &t, &b, tl) - 1.0).abs() < 1e-10);
        // (Σ (−1)^m R²/Σ R²)² = (2.96/6.96)²
        let quarter = efficiency(&s, &t, &b, tl / 4.0);
        assert!((quarter - (2.96f64 / 6.96).powi(2)).abs() < 1e-12);
        assert!((1.0 / quarter - 5.53).abs() / 5.53 < 0.01);
    }

    #[test]
    fn transverse_half_period_closed_form() {
        let (s, t) = rb();
        let closed = transverse_half_period_efficiency(&t).unwrap();
        // Σ R_m R_{−m} = 4.0, Σ R² = 6.96
        assert!((closed - (4.0f64 / 6.96).powi(2)).abs() < 1e-12);
        let f = efficiency(&s, &t, &field(&s, FRAC_PI_2), 4e-6);
        assert!((f - closed).abs() < 1e-10);
    }

    #[test]
    fn diagonal_suppression() {
        let (s, t) = rb();
        let f = |th| efficiency(&s, &t, &field(&s, th), 4e-6);
        assert!(f(FRAC_PI_4) < f(0.0));
        assert!(f(FRAC_PI_4) < 0.5 * f(FRAC_PI_2));
    }

    #[test]
    fn collapse_rate_regression() {
        // 8·Var_w(m) with weights R²/ΣR²: mean 8.88/6.96, second moment 18.64/6.96
        let (_, t) = rb();
        let mean = 8.88 / 6.96;
        let var = 18.64 / 6.96 - mean * mean;
        let eta = collapse_rate(&t);
        assert!((eta - (8.0f64 * var).sqrt()).abs() < 1e-12);
        assert!((eta - 2.898_740_3).abs() < 1e-6, "eta = {eta}");
    }

    #[test]
    fn single_lambda_has_no_collapse() {
        let s = LevelScheme {
            f_g: HalfInt::ZERO,
            f_gp: HalfInt::ZERO,
            f_e: HalfInt::integer(1),
            ..LevelScheme::rb85_d1()
        };
        let t = build_coupling_tables(&s, &FieldPolarizations::new(1, 1).unwrap()).unwrap();
        assert_eq!(collapse_rate(&t), 0.0);
    }

    #[test]
    fn short_time_gaussian_collapse() {
        let (s, t) = rb();
        let b = field(&s, 0.0);
        let eta = collapse_rate(&t);
        let omega_l = s.g_g.abs() * b.omega_b();
        for k in 0..=20 {
            let x = 0.01 * k as f64;
            let f = efficiency(&s, &t, &b, x / omega_l);
            assert!((f - (-0.5 * eta * eta * x * x).exp()).abs() < 0.01);
        }
    }

    #[test]
    fn period_and_reflection() {
        let (s, t) = rb();
        let b = field(&s, 0.0);
        for theta in [0.0, 0.2, 0.9, 1.4] {
            for x in [0.05, 0.31, 0.5, 0.77] {
                let ts = x * 8e-6;
                let a = efficiency_for_axis(&s, &t, b.omega_b(), theta, ts);
                let later = efficiency_for_axis(&s, &t, b.omega_b(), theta, ts + 8e-6);
                let mirrored = efficiency_for_axis(&s, &t, b.omega_b(), -theta, ts);
                assert!((a - later).abs() < 1e-10);
                assert!((a - mirrored).abs() < 1e-12);
                assert!((0.0..=1.0 + 1e-12).contains(&a));
            }
        }
    }

    #[test]
    fn coupling_order_convention_does_not_matter() {
        // Rebuild the tables with the opposite coupling order,
        // ⟨1 q; F m | F_e m+q⟩ = (−1)^{F+1−F_e} ⟨F m; 1 q | F_e m+q⟩,
        // straight from the Clebsch-Gordan routine.
        use crate::angmom::clebsch_gordan;
        let (s, t) = rb();
        let one = HalfInt::integer(1);
        let cg = |f: HalfInt, m: HalfInt| {
            if (m + one).index_in(s.f_e).is_none() {
                0.0
            } else {
                clebsch_gordan(one, f, s.f_e, one, m, m + one).unwrap()
            }
        };
        let mut swapped = t.clone();
        swapped.c = s.f_g.projections().map(|m| cg(s.f_g, m)).collect();
        swapped.cp_lambda = s.f_g.projections().map(|m| cg(s.f_gp, m)).collect();
        swapped.r = swapped.c.iter().zip(&swapped.cp_lambda).map(|(c, cp)| c / cp).collect();
        assert!(swapped.c.iter().zip(&t.c).all(|(a, b)| (a.abs() - b.abs()).abs() < 1e-15));
        let b = field(&s, 0.6);
        for x in [0.1, 0.25, 0.5, 0.8] {
            let a = efficiency(&s, &t, &b, x * 8e-6);
            let c = efficiency(&s, &swapped, &b, x * 8e-6);
            assert!((a - c).abs() < 1e-14);
        }
        assert!((collapse_rate(&t) - collapse_rate(&swapped)).abs() < 1e-14);
        assert!(
            (transverse_half_period_efficiency(&t).unwrap()
                - transverse_half_period_efficiency(&swapped).unwrap())
            .abs()
                < 1e-14
        );
    }

    #[test]
    fn surface_corners() {
        let (s, t) = rb();
        let b = field(&s, 0.0);
        let thetas = [0.0, FRAC_PI_4, FRAC_PI_2];
        let times = [0.0, 2e-6, 4e-6, 8e-6];
        let surf = revival_surface(&s, &t, b.gauss, &thetas, &times).unwrap();
        assert!((surf.values[2][0] - 1.0).abs() < 1e-10);
        for v in &surf.values[3] {
            assert!((v - 1.0).abs() < 1e-10);
        }
        assert!(surf.values[2][1] < surf.values[2][0] && surf.values[2][1] < surf.values[2][2]);
        assert!(revival_surface(&s, &t, b.gauss, &[], &times).is_err());
    }
}
