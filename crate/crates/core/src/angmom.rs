//! Angular momentum algebra.
//!
//! Phase convention is Condon-Shortley throughout: stretched-state
//! Clebsch-Gordan coefficients ⟨j1 j1; j2 j2 | j1+j2, j1+j2⟩ are +1 and
//! matrix elements of `F_+` are real and non-negative. Wigner small-d
//! matrices follow d^F_{m m'}(β) = ⟨F m| exp(-iβF_y) |F m'⟩.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-integer stored as twice its value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
/// Serialized as its value, so `1.5` in JSON is F = 3/2.
#[serde(into = "f64", try_from = "f64")]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn integer(n: i32) -> Self {
        HalfInt(2 * n)
    }

    /// Parses a value like `2`, `1.5` or `-0.5`; anything else is rejected.
    pub fn try_from_f64(x: f64) -> Result<Self> {
        let twice = 2.0 * x;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-9 || twice.abs() > 1e6 {
            return Err(Error::Input(format!("{x} is not a half-integer")));
        }
        Ok(HalfInt(twice.round() as i32))
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        0.5 * self.0 as f64
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub const fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }

    /// Multiplicity 2F+1 of an angular momentum F.
    pub fn multiplicity(self) -> usize {
        (self.0 + 1).max(0) as usize
    }

    /// Whether `self` and `other` differ by an integer.
    pub const fn same_parity(self, other: HalfInt) -> bool {
        (self.0 - other.0) % 2 == 0
    }

    /// Projections m = -F, -F+1, ..., F.
    pub fn projections(self) -> impl DoubleEndedIterator<Item = HalfInt> + Clone {
        let f = self.0;
        (0..2 * f.max(-1) + 1).step_by(2).map(move |k| HalfInt(k - f))
    }

    /// Position of the projection `self` in the list `-F..=F`, if it is one.
    pub fn index_in(self, f: HalfInt) -> Option<usize> {
        if self.0.abs() > f.0 || !self.same_parity(f) {
            None
        } else {
            Some(((self.0 + f.0) / 2) as usize)
        }
    }

    /// Integer value of an integer-valued half-integer.
    fn int(self) -> i64 {
        debug_assert!(self.is_integer());
        (self.0 / 2) as i64
    }
}

impl fmt::Debug for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl PartialOrd for HalfInt {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HalfInt {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl From<i32> for HalfInt {
    fn from(n: i32) -> Self {
        HalfInt::integer(n)
    }
}

impl From<HalfInt> for f64 {
    fn from(h: HalfInt) -> f64 {
        h.as_f64()
    }
}

impl TryFrom<f64> for HalfInt {
    type Error = Error;

    fn try_from(x: f64) -> Result<Self> {
        HalfInt::try_from_f64(x)
    }
}

const FACTORIAL_TABLE_LEN: usize = 171;

fn factorial(n: i64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        // Built from exact u128 products while they fit (n <= 34).
        let mut out = Vec::with_capacity(FACTORIAL_TABLE_LEN);
        let mut exact: u128 = 1;
        let mut approx = 1.0f64;
        for k in 0..FACTORIAL_TABLE_LEN {
            if k > 0 {
                approx *= k as f64;
                exact = exact.saturating_mul(k as u128);
            }
            out.push(if k <= 34 { exact as f64 } else { approx });
        }
        out
    });
    assert!((0..FACTORIAL_TABLE_LEN as i64).contains(&n), "factorial argument {n} out of range");
    table[n as usize]
}

fn check_projection(j: HalfInt, m: HalfInt, what: &str) -> Result<()> {
    if j.twice() < 0 {
        return Err(Error::Input(format!("{what}: negative angular momentum {j}")));
    }
    if !j.same_parity(m) {
        return Err(Error::Input(format!("{what}: projection {m} has wrong parity for j = {j}")));
    }
    if m.abs() > j {
        return Err(Error::Input(format!("{what}: |{m}| exceeds j = {j}")));
    }
    Ok(())
}

/// Clebsch-Gordan coefficient ⟨j1 m1; j2 m2 | j m⟩ via the Racah formula.
///
/// Returns zero when `m != m1 + m2` or the triangle condition fails.
pub fn clebsch_gordan(
    j1: HalfInt,
    j2: HalfInt,
    j: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m: HalfInt,
) -> Result<f64> {
    check_projection(j1, m1, "j1")?;
    check_projection(j2, m2, "j2")?;
    check_projection(j, m, "j")?;
    if m1 + m2 != m {
        return Ok(0.0);
    }
    if j > j1 + j2 || j < (j1 - j2).abs() || !(j1 + j2).same_parity(j) {
        return Ok(0.0);
    }

    let a = (j + j1 - j2).int();
    let b = (j - j1 + j2).int();
    let c = (j1 + j2 - j).int();
    let s = (j1 + j2 + j).int() + 1;
    let triangle = factorial(a) * factorial(b) * factorial(c) / factorial(s);
    let norm = factorial((j + m).int())
        * factorial((j - m).int())
        * factorial((j1 - m1).int())
        * factorial((j1 + m1).int())
        * factorial((j2 - m2).int())
        * factorial((j2 + m2).int());

    let d1 = c;
    let d2 = (j1 - m1).int();
    let d3 = (j2 + m2).int();
    let d4 = (j - j2 + m1).int();
    let d5 = (j - j1 - m2).int();
    let k_min = 0.max(-d4).max(-d5);
    let k_max = d1.min(d2).min(d3);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign
            / (factorial(k)
                * factorial(d1 - k)
                * factorial(d2 - k)
                * factorial(d3 - k)
                * factorial(d4 + k)
                * factorial(d5 + k));
    }
    Ok(((j.twice() + 1) as f64 * triangle * norm).sqrt() * sum)
}

/// Wigner small-d matrix d^F(β), rows and columns ordered m = -F..F.
pub fn wigner_small_d(f: HalfInt, beta: f64) -> Result<DMatrix<f64>> {
    if f.twice() < 0 {
        return Err(Error::Input(format!("negative angular momentum {f}")));
    }
    if !beta.is_finite() {
        return Err(Error::Input(format!("rotation angle {beta} is not finite")));
    }
    let dim = f.multiplicity();
    let (c, s) = ((0.5 * beta).cos(), (0.5 * beta).sin());
    let projections: Vec<HalfInt> = f.projections().collect();
    let mut out = DMatrix::zeros(dim, dim);
    for (row, &mp) in projections.iter().enumerate() {
        for (col, &m) in projections.iter().enumerate() {
            let jpm = (f + m).int();
            let jmm = (f - m).int();
            let jpmp = (f + mp).int();
            let jmmp = (f - mp).int();
            let dm = (mp - m).int();
            let pref = (factorial(jpmp) * factorial(jmmp) * factorial(jpm) * factorial(jmm)).sqrt();
            let k_min = 0.max(-dm);
            let k_max = jpm.min(jmmp);
            let mut sum = 0.0;
            for k in k_min..=k_max {
                let sign = if (dm + k) % 2 == 0 { 1.0 } else { -1.0 };
                let denom = factorial(jpm - k) * factorial(k) * factorial(dm + k) * factorial(jmmp - k);
                let cos_pow = ((f + f + m - mp).int() - 2 * k) as i32;
                let sin_pow = (dm + 2 * k) as i32;
                sum += sign * c.powi(cos_pow) * s.powi(sin_pow) / denom;
            }
            out[(row, col)] = pref * sum;
        }
    }
    Ok(out)
}

/// Tridiagonal real symmetric operator on a (2F+1)-dimensional level:
/// `diag[k]` on the diagonal, `off[k]` coupling states k and k+1.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            out[(k, k)] = self.diag[k];
            if k + 1 < n {
                out[(k, k + 1)] = self.off[k];
                out[(k + 1, k)] = self.off[k];
            }
        }
        out
    }
}

/// The spin component along a unit axis in the x-z plane at angle `theta`
/// from z, scaled by `scale`: scale · (sinθ F_x + cosθ F_z).
pub fn spin_projection(f: HalfInt, theta: f64, scale: f64) -> Tridiagonal {
    let ff = f.as_f64();
    let ms: Vec<f64> = f.projections().map(HalfInt::as_f64).collect();
    let diag = ms.iter().map(|m| scale * theta.cos() * m).collect();
    let off = ms
        .iter()
        .take(ms.len().saturating_sub(1))
        .map(|m| scale * theta.sin() * 0.5 * (ff * (ff + 1.0) - m * (m + 1.0)).sqrt())
        .collect();
    Tridiagonal { diag, off }
}

/// Matrix of a rotation operator restricted to one hyperfine level,
/// indexed by (m_row, m_col) over -F..F.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationMatrix {
    f: HalfInt,
    entries: DMatrix<Complex64>,
}

impl RotationMatrix {
    pub fn identity(f: HalfInt) -> Self {
        let n = f.multiplicity();
        RotationMatrix { f, entries: DMatrix::identity(n, n) }
    }

    pub fn f(&self) -> HalfInt {
        self.f
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Element ⟨F m_row| D |F m_col⟩.
    pub fn get(&self, m_row: HalfInt, m_col: HalfInt) -> Complex64 {
        match (m_row.index_in(self.f), m_col.index_in(self.f)) {
            (Some(r), Some(c)) => self.entries[(r, c)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn adjoint(&self) -> Self {
        RotationMatrix { f: self.f, entries: self.entries.adjoint() }
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        assert_eq!(self.f, other.f, "composing rotations of different levels");
        RotationMatrix { f: self.f, entries: &self.entries * &other.entries }
    }

    /// max |(D†D - I)_{ij}|
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.entries.nrows();
        let prod = self.entries.adjoint() * &self.entries;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).norm());
            }
        }
        worst
    }
}

/// Rotation matrix ⟨F m| exp(-i g_s Ω_B·F t) |F m'⟩ for a field in the x-z
/// plane at angle `theta` from z, built as
/// exp(-iθF_y) exp(-iφF_z) exp(+iθF_y) with φ = g_s |Ω_B| t.
pub fn rotation_matrix(f: HalfInt, g_s: f64, omega_b: f64, theta: f64, t: f64) -> RotationMatrix {
    let phi = g_s * omega_b * t;
    precession_matrix(f, theta, phi)
}

/// Rotation by precession angle `phi` about the axis at `theta` in the x-z plane.
pub fn precession_matrix(f: HalfInt, theta: f64, phi: f64) -> RotationMatrix {
    if phi == 0.0 {
        return RotationMatrix::identity(f);
    }
    let d = wigner_small_d(f, theta).expect("finite rotation angle");
    let n = f.multiplicity();
    let phases: Vec<Complex64> =
        f.projections().map(|m| Complex64::from_polar(1.0, -m.as_f64() * phi)).collect();
    let mut entries = DMatrix::<Complex64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += phases[k] * (d[(r, k)] * d[(c, k)]);
            }
            entries[(r, c)] = acc;
        }
    }
    RotationMatrix { f, entries }
}
