//! Time-domain store-and-retrieve simulation.
//!
//! Works in the retarded frame τ = t − z/c, where the envelope equation
//! becomes ∂Φ/∂z = (i/c) Σ_m C_m P_m with P = NκQ^{g m}_{e m+α}. The atomic
//! amplitudes are stored scaled by Nκ (κ real), so the only coupling
//! parameter is N|κ|², fixed by the optical thickness. The whole grid is
//! advanced with classical RK4 in τ; at every stage the field profile is
//! rebuilt from the optical coherences by a trapezoidal march in z.
//!
//! Magnetic precession enters as
//! dQ^{g m}_{s m′}/dt ⊃ i (M_g Q)_{m m′} − i (Q M_s)_{m m′},
//! M_s = g_s Ω_B·F^{(s)}, which reproduces the rotation-matrix transport
//! Q → D^{(g)†} Q D^{(s)} used for the dark storage interval.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::angmom::{rotation_matrix, spin_projection, Tridiagonal};
use crate::constants::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::polariton::{decompose_with_basis, PolaritonBasis, PolaritonDecomposition};
use crate::scheme::{
    build_coupling_tables, calibrate_coupling, CouplingTables, FieldPolarizations, LevelScheme, MagneticField,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
fn times_i(z: Complex64) -> Complex64 {
    Complex64::new(-z.im, z.re)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Control Rabi frequency Ω(τ): on at `omega_on`, ramped down over
/// [t_off, t_off + ramp] and back up over [t_on, t_on + ramp] with a
/// smoothstep profile. `t_off = None` keeps the control on throughout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlEnvelope {
    pub omega_on: f64,
    pub ramp: f64,
    pub t_off: Option<f64>,
    pub t_on: Option<f64>,
}

impl ControlEnvelope {
    pub fn constant(omega_on: f64) -> Self {
        ControlEnvelope { omega_on, ramp: 0.0, t_off: None, t_on: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_on >= 0.0 && self.omega_on.is_finite()) {
            return Err(Error::Config(format!("control Rabi frequency {} is invalid", self.omega_on)));
        }
        if !(self.ramp >= 0.0 && self.ramp.is_finite()) {
            return Err(Error::Config(format!("control ramp {} is invalid", self.ramp)));
        }
        match (self.t_off, self.t_on) {
            (None, Some(_)) => Err(Error::Config("control t_on given without t_off".into())),
            (Some(off), Some(on)) if on - off < self.ramp => Err(Error::Config(format!(
                "storage window {:.3e} s is shorter than the control ramp {:.3e} s",
                on - off,
                self.ramp
            ))),
            _ => Ok(()),
        }
    }

    pub fn rabi(&self, t: f64) -> f64 {
        let Some(off) = self.t_off else {
            return self.omega_on;
        };
        if t < off {
            return self.omega_on;
        }
        if t < off + self.ramp {
            return self.omega_on * (1.0 - smoothstep((t - off) / self.ramp));
        }
        let Some(on) = self.t_on else {
            return 0.0;
        };
        if t < on {
            0.0
        } else if t < on + self.ramp {
            self.omega_on * smoothstep((t - on) / self.ramp)
        } else {
            self.omega_on
        }
    }

    /// Whether Ω vanishes on the whole interval [a, b].
    pub fn dark_between(&self, a: f64, b: f64) -> bool {
        match (self.t_off, self.t_on) {
            (None, _) => self.omega_on == 0.0,
            (Some(off), on) => self.omega_on == 0.0 || (a >= off + self.ramp && on.is_none_or(|on| b <= on)),
        }
    }
}

/// Incident signal amplitude Φ(z = 0, τ).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SignalEnvelope {
    /// Gaussian pulse; `fwhm` is the full width at half maximum of the intensity.
    Gaussian { fwhm: f64, peak_time: f64, amplitude: f64 },
    /// Constant drive switched on at `start` with a smoothstep rise.
    Continuous { start: f64, rise: f64, amplitude: f64 },
}

impl SignalEnvelope {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SignalEnvelope::Gaussian { fwhm, peak_time, amplitude } => {
                fwhm > 0.0
                    && fwhm.is_finite()
                    && peak_time.is_finite()
                    && amplitude.is_finite()
                    && amplitude != 0.0
            }
            SignalEnvelope::Continuous { start, rise, amplitude } => {
                start.is_finite()
                    && rise >= 0.0
                    && rise.is_finite()
                    && amplitude.is_finite()
                    && amplitude != 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid signal envelope {self:?}")))
        }
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        match *self {
            SignalEnvelope::Gaussian { fwhm, peak_time, amplitude } => {
                let x = (t - peak_time) / fwhm;
                amplitude * (-2.0 * std::f64::consts::LN_2 * x * x).exp()
            }
            SignalEnvelope::Continuous { start, rise, amplitude } => {
                if t < start {
                    0.0
                } else if rise == 0.0 {
                    amplitude
                } else {
                    amplitude * smoothstep((t - start) / rise)
                }
            }
        }
    }

    pub fn peak_intensity(&self) -> f64 {
        match *self {
            SignalEnvelope::Gaussian { amplitude, .. } | SignalEnvelope::Continuous { amplitude, .. } => {
                amplitude * amplitude
            }
        }
    }

    /// Whether |Φ(0, τ)|² stays below `rel` × peak for every τ ≥ t.
    pub fn negligible_from(&self, t: f64, rel: f64) -> bool {
        match *self {
            SignalEnvelope::Gaussian { peak_time, .. } => {
                t >= peak_time && self.amplitude(t).powi(2) <= rel * self.peak_intensity()
            }
            SignalEnvelope::Continuous { .. } => false,
        }
    }

    fn default_start(&self) -> f64 {
        match *self {
            SignalEnvelope::Gaussian { fwhm, peak_time, .. } => peak_time - 3.5 * fwhm,
            SignalEnvelope::Continuous { start, .. } => start,
        }
    }

    fn default_end(&self) -> f64 {
        match *self {
            SignalEnvelope::Gaussian { fwhm, peak_time, .. } => peak_time + 3.5 * fwhm,
            SignalEnvelope::Continuous { start, rise, .. } => start + rise + 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub nz: usize,
    pub dt: f64,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { nz: 200, dt: 0.25e-9, t_start: None, t_end: None }
    }
}

/// Everything needed to run one simulation, in SI units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Protocol {
    pub scheme: LevelScheme,
    pub pol: FieldPolarizations,
    pub length: f64,
    pub d_alpha: f64,
    pub control: ControlEnvelope,
    pub signal: SignalEnvelope,
    pub field: MagneticField,
    /// Interval [a, b) during which the magnetic field is applied; `None`
    /// keeps it on for the whole run.
    pub field_window: Option<(f64, f64)>,
    pub grid: Grid,
    /// Observation point for p_D/p_B as a fraction of the sample length.
    pub observation_z: f64,
    /// Replace ODE stepping by rotation-matrix transport during dark storage.
    pub analytic_storage: bool,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.control.validate()?;
        self.signal.validate()?;
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config(format!("sample length {} is invalid", self.length)));
        }
        if let Some((a, b)) = self.field_window {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::Config(format!("magnetic field window [{a:.3e}, {b:.3e}] is empty")));
            }
        }
        if self.grid.nz < 2 {
            return Err(Error::Config("grid needs at least 2 z points".into()));
        }
        if !(0.0..=1.0).contains(&self.observation_z) {
            return Err(Error::Config(format!("observation point {} outside [0, 1]", self.observation_z)));
        }
        let (t0, t1) = (self.t_start(), self.t_end());
        if !(t1 > t0) {
            return Err(Error::Config(format!("empty time window [{t0:.3e}, {t1:.3e}]")));
        }
        let limit = self.dt_limit();
        if !(self.grid.dt > 0.0 && self.grid.dt < limit) {
            return Err(Error::Config(format!(
                "time step {:.3e} s does not resolve the fastest rate; need dt < {limit:.3e} s",
                self.grid.dt
            )));
        }
        Ok(())
    }

    /// 0.05 × the shortest of 1/Γ_e, 1/Ω_on and 1/(F g ω_B).
    pub fn dt_limit(&self) -> f64 {
        let rates = [
            self.scheme.gamma_e,
            self.control.omega_on,
            self.scheme.max_zeeman_weight() * self.field.omega_b(),
        ];
        let fastest = rates.iter().cloned().fold(0.0, f64::max);
        0.05 / fastest
    }

    pub fn field_active(&self, t: f64) -> bool {
        self.field_window.is_none_or(|(a, b)| t >= a && t < b)
    }

    /// Time during [t0, t1] for which the field is applied.
    pub fn field_exposure(&self, t0: f64, t1: f64) -> f64 {
        match self.field_window {
            None => t1 - t0,
            Some((a, b)) => (t1.min(b) - t0.max(a)).max(0.0),
        }
    }

    pub fn t_start(&self) -> f64 {
        self.grid.t_start.unwrap_or_else(|| self.signal.default_start())
    }

    pub fn t_end(&self) -> f64 {
        self.grid.t_end.unwrap_or_else(|| {
            let mut end = self.signal.default_end();
            if let Some(on) = self.control.t_on {
                end = end.max(on + self.control.ramp + 1e-6);
            }
            end
        })
    }
}

/// Per-point linear operator of the atomic equations.
#[derive(Clone, Debug)]
pub struct AtomicModel {
    pub tables: CouplingTables,
    pub ng: usize,
    pub ngp: usize,
    pub ne: usize,
    half_gamma: f64,
    /// N|κ|² p, multiplying C_m Φ in the optical equations.
    drive: f64,
    /// N|κ|²
    coupling: f64,
    p: f64,
    /// For each g′ sublevel: (e index of m′+β, C′_{m′β}).
    control_up: Vec<Option<(usize, f64)>>,
    /// For each e sublevel: (g′ index of m″−β, C′_{m″−β,β}).
    control_down: Vec<Option<(usize, f64)>>,
    /// For each g sublevel: (e index of m+α, C_{mα}).
    signal: Vec<Option<(usize, f64)>>,
    zeeman_g: Tridiagonal,
    zeeman_gp: Tridiagonal,
    zeeman_e: Tridiagonal,
}

impl AtomicModel {
    pub fn new(
        scheme: &LevelScheme,
        pol: &FieldPolarizations,
        coupling: f64,
        field: &MagneticField,
    ) -> Result<Self> {
        let tables = build_coupling_tables(scheme, pol)?;
        let (ng, ngp, ne) =
            (scheme.f_g.multiplicity(), scheme.f_gp.multiplicity(), scheme.f_e.multiplicity());
        let beta = pol.beta_h();
        let alpha = pol.alpha_h();
        let control_up = scheme
            .f_gp
            .projections()
            .enumerate()
            .map(|(j, mp)| (mp + beta).index_in(scheme.f_e).map(|l| (l, tables.cp[j])))
            .map(|o| o.filter(|(_, c)| *c != 0.0))
            .collect();
        let control_down = scheme
            .f_e
            .projections()
            .map(|me| (me - beta).index_in(scheme.f_gp).map(|j| (j, tables.cp[j])))
            .map(|o| o.filter(|(_, c)| *c != 0.0))
            .collect();
        let signal = scheme
            .f_g
            .projections()
            .enumerate()
            .map(|(k, m)| (m + alpha).index_in(scheme.f_e).map(|l| (l, tables.c[k])))
            .map(|o| o.filter(|(_, c)| *c != 0.0))
            .collect();
        let wb = field.omega_b();
        Ok(AtomicModel {
            ng,
            ngp,
            ne,
            half_gamma: 0.5 * scheme.gamma_e,
            drive: coupling * scheme.p(),
            coupling,
            p: scheme.p(),
            control_up,
            control_down,
            signal,
            zeeman_g: spin_projection(scheme.f_g, field.theta, scheme.g_g * wb),
            zeeman_gp: spin_projection(scheme.f_gp, field.theta, scheme.g_gp * wb),
            zeeman_e: spin_projection(scheme.f_e, field.theta, scheme.g_e * wb),
            tables,
        })
    }

    /// Number of hyperfine amplitudes per point.
    pub fn n_hf(&self) -> usize {
        self.ng * self.ngp
    }

    /// Number of complex amplitudes per point (hyperfine then optical).
    pub fn block(&self) -> usize {
        self.ng * (self.ngp + self.ne)
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Time derivative of one point's amplitudes.
    pub fn derivative(&self, y: &[Complex64], phi: Complex64, omega: f64, dy: &mut [Complex64]) {
        let (ng, ngp, ne) = (self.ng, self.ngp, self.ne);
        let (hf, opt) = y.split_at(ng * ngp);
        let (dhf, dopt) = dy.split_at_mut(ng * ngp);
        let (zg, zgp, ze) = (&self.zeeman_g, &self.zeeman_gp, &self.zeeman_e);

        for k in 0..ng {
            for j in 0..ngp {
                let mut acc = hf[k * ngp + j] * (zg.diag[k] - zgp.diag[j]);
                if k > 0 {
                    acc += hf[(k - 1) * ngp + j] * zg.off[k - 1];
                }
                if k + 1 < ng {
                    acc += hf[(k + 1) * ngp + j] * zg.off[k];
                }
                if j > 0 {
                    acc -= hf[k * ngp + j - 1] * zgp.off[j - 1];
                }
                if j + 1 < ngp {
                    acc -= hf[k * ngp + j + 1] * zgp.off[j];
                }
                if let Some((l, c)) = self.control_up[j] {
                    acc += opt[k * ne + l] * (omega * c);
                }
                dhf[k * ngp + j] = times_i(acc);
            }
        }

        for k in 0..ng {
            for l in 0..ne {
                let own = opt[k * ne + l];
                let mut acc = own * (zg.diag[k] - ze.diag[l]);
                if k > 0 {
                    acc += opt[(k - 1) * ne + l] * zg.off[k - 1];
                }
                if k + 1 < ng {
                    acc += opt[(k + 1) * ne + l] * zg.off[k];
                }
                if l > 0 {
                    acc -= opt[k * ne + l - 1] * ze.off[l - 1];
                }
                if l + 1 < ne {
                    acc -= opt[k * ne + l + 1] * ze.off[l];
                }
                if let Some((j, c)) = self.control_down[l] {
                    acc += hf[k * ngp + j] * (omega * c);
                }
                dopt[k * ne + l] = times_i(acc) - own * self.half_gamma;
            }
            if let Some((l, c)) = self.signal[k] {
                dopt[k * ne + l] += times_i(phi * (self.drive * c));
            }
        }
    }

    /// ∂Φ/∂z at one point, (i/c) Σ_m C_m P_m.
    pub fn field_source(&self, y: &[Complex64]) -> Complex64 {
        let opt = &y[self.n_hf()..];
        let mut acc = ZERO;
        for (k, s) in self.signal.iter().enumerate() {
            if let Some((l, c)) = *s {
                acc += opt[k * self.ne + l] * c;
            }
        }
        times_i(acc) / SPEED_OF_LIGHT
    }

    /// One RK4 step of a single point with the local field held fixed.
    pub fn step_atoms(
        &self,
        y: &mut [Complex64],
        phi: Complex64,
        omega: &dyn Fn(f64) -> f64,
        t: f64,
        dt: f64,
    ) -> Result<()> {
        let n = self.block();
        let mut k = vec![ZERO; n];
        let mut tmp = vec![ZERO; n];
        let mut acc = y.to_vec();
        let stages = [(0.0, 1.0 / 6.0), (0.5, 1.0 / 3.0), (0.5, 1.0 / 3.0), (1.0, 1.0 / 6.0)];
        tmp.copy_from_slice(y);
        for (s, &(c, w)) in stages.iter().enumerate() {
            self.derivative(&tmp, phi, omega(t + c * dt), &mut k);
            for i in 0..n {
                acc[i] += k[i] * (w * dt);
            }
            if s < 3 {
                let next = stages[s + 1].0;
                for i in 0..n {
                    tmp[i] = y[i] + k[i] * (next * dt);
                }
            }
        }
        if acc.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Instability {
                time: t + dt,
                reason: "non-finite atomic amplitude; reduce the time step".into(),
            });
        }
        y.copy_from_slice(&acc);
        Ok(())
    }

    /// Hyperfine block of a point as an F_g × F_g′ matrix.
    pub fn hyperfine_matrix(&self, y: &[Complex64]) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.ng, self.ngp, &y[..self.n_hf()])
    }

    pub fn decompose(
        &self,
        basis: &PolaritonBasis,
        y: &[Complex64],
        phi: Complex64,
    ) -> PolaritonDecomposition {
        decompose_with_basis(&self.tables, basis, phi, &y[..self.n_hf()], self.coupling, self.p)
    }

    pub fn basis(&self, omega: f64) -> Option<PolaritonBasis> {
        PolaritonBasis::new(&self.tables, omega, self.coupling, self.p).ok()
    }
}

/// Trapezoidal march of the field along z from `phi0` at z = 0, given the
/// per-point sources ∂Φ/∂z.
pub fn step_field(sources: &[Complex64], dz: f64, phi0: Complex64, out: &mut [Complex64]) {
    debug_assert_eq!(sources.len(), out.len());
    out[0] = phi0;
    for i in 1..out.len() {
        out[i] = out[i - 1] + (sources[i - 1] + sources[i]) * (0.5 * dz);
    }
}

/// Amplitudes of every grid point plus the field profile.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceState {
    pub nz: usize,
    pub block: usize,
    pub n_hf: usize,
    pub amplitudes: Vec<Complex64>,
    pub phi: Vec<Complex64>,
}

impl CoherenceState {
    pub fn zeros(model: &AtomicModel, nz: usize) -> Self {
        CoherenceState {
            nz,
            block: model.block(),
            n_hf: model.n_hf(),
            amplitudes: vec![ZERO; nz * model.block()],
            phi: vec![ZERO; nz],
        }
    }

    pub fn point(&self, i: usize) -> &[Complex64] {
        &self.amplitudes[i * self.block..(i + 1) * self.block]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.amplitudes[i * self.block..(i + 1) * self.block]
    }

    /// Largest per-point norm of the optical coherences.
    pub fn optical_norm(&self) -> f64 {
        (0..self.nz)
            .map(|i| self.point(i)[self.n_hf..].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        for z in self.amplitudes.iter_mut().chain(self.phi.iter_mut()) {
            *z *= s;
        }
    }
}

/// Transports hyperfine coherences through a dark interval of length `t_s`:
/// Q → D^{(g)†} Q D^{(g′)} at every point. Optical coherences and the field
/// are cleared; the caller guarantees they have decayed.
pub fn evolve_storage_analytic(
    state: &mut CoherenceState,
    scheme: &LevelScheme,
    field: &MagneticField,
    t_s: f64,
    omega: f64,
) -> Result<()> {
    if omega != 0.0 {
        return Err(Error::Contract(format!(
            "analytic storage requires the control off, got Ω = {omega:.3e} rad/s"
        )));
    }
    let (ng, ngp) = (scheme.f_g.multiplicity(), scheme.f_gp.multiplicity());
    if state.n_hf != ng * ngp {
        return Err(Error::Contract("state does not match the level scheme".into()));
    }
    let dg = rotation_matrix(scheme.f_g, scheme.g_g, field.omega_b(), field.theta, t_s);
    let dgp = rotation_matrix(scheme.f_gp, scheme.g_gp, field.omega_b(), field.theta, t_s);
    let left = dg.entries().adjoint();
    let right = dgp.entries();
    let n_hf = state.n_hf;
    for i in 0..state.nz {
        let y = state.point_mut(i);
        let q = DMatrix::from_row_slice(ng, ngp, &y[..n_hf]);
        let q = &left * q * right;
        for k in 0..ng {
            for j in 0..ngp {
                y[k * ngp + j] = q[(k, j)];
            }
        }
        for z in y[n_hf..].iter_mut() {
            *z = ZERO;
        }
    }
    for z in state.phi.iter_mut() {
        *z = ZERO;
    }
    Ok(())
}

/// One recorded instant of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecordSample {
    pub t: f64,
    pub omega: f64,
    /// |Φ(L, τ)|² over the peak input intensity.
    pub transmittance: f64,
    /// Decomposition at the observation point.
    pub local: PolaritonDecomposition,
    /// Decomposition integrated over z (per unit length × L).
    pub integrated: PolaritonDecomposition,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationRecord {
    pub samples: Vec<RecordSample>,
    /// Energies in units of peak input intensity × seconds.
    pub e_in: f64,
    pub e_leaked: f64,
    pub e_retrieved: f64,
    pub coupling: f64,
    pub observation_index: usize,
    /// Interval replaced by analytic transport, if any.
    pub analytic_interval: Option<(f64, f64)>,
}

impl SimulationRecord {
    pub fn efficiency(&self) -> f64 {
        self.e_retrieved / self.e_in
    }

    pub fn peak_local_p_d(&self) -> f64 {
        self.samples.iter().map(|s| s.local.p_d).fold(0.0, f64::max)
    }

    /// Output energy in [a, b), in units of peak input intensity × seconds.
    pub fn output_energy_between(&self, a: f64, b: f64) -> f64 {
        self.samples
            .windows(2)
            .filter(|w| {
                let mid = 0.5 * (w[0].t + w[1].t);
                mid >= a && mid < b
            })
            .map(|w| 0.5 * (w[0].transmittance + w[1].transmittance) * (w[1].t - w[0].t))
            .sum()
    }

    /// Centroid of the transmitted intensity over the whole record.
    pub fn output_centroid(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for w in self.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let i = 0.5 * (w[0].transmittance + w[1].transmittance);
            num += i * 0.5 * (w[0].t + w[1].t) * dt;
            den += i * dt;
        }
        num / den
    }
}

/// Relative threshold on the optical coherences below which the analytic
/// storage transport takes over.
const OPTICAL_DECAY_THRESHOLD: f64 = 1e-6;
/// Relative input intensity treated as zero for the analytic transport.
const SIGNAL_TAIL_THRESHOLD: f64 = 1e-14;
/// Sampling interval of the record during analytic storage, in time steps.
const STORAGE_SAMPLE_STRIDE: usize = 40;

/// Time-domain integrator over the whole sample.
pub struct Simulator {
    pub protocol: Protocol,
    pub model: AtomicModel,
    /// Same atoms without the Zeeman terms, used outside the field window.
    unperturbed: AtomicModel,
    pub state: CoherenceState,
    pub t: f64,
    dz: f64,
    sources: Vec<Complex64>,
    scratch_y: Vec<Complex64>,
    scratch_k: Vec<Complex64>,
    scratch_acc: Vec<Complex64>,
    scratch_phi: Vec<Complex64>,
}

impl Simulator {
    pub fn new(protocol: Protocol) -> Result<Self> {
        protocol.validate()?;
        let tables = build_coupling_tables(&protocol.scheme, &protocol.pol)?;
        let coupling = calibrate_coupling(protocol.d_alpha, &protocol.scheme, protocol.length, &tables)?;
        let model = AtomicModel::new(&protocol.scheme, &protocol.pol, coupling, &protocol.field)?;
        let unperturbed =
            AtomicModel::new(&protocol.scheme, &protocol.pol, coupling, &MagneticField::zero())?;
        let nz = protocol.grid.nz;
        let state = CoherenceState::zeros(&model, nz);
        let n = state.amplitudes.len();
        let t = protocol.t_start();
        let dz = protocol.length / (nz - 1) as f64;
        let mut sim = Simulator {
            protocol,
            model,
            unperturbed,
            state,
            t,
            dz,
            sources: vec![ZERO; nz],
            scratch_y: vec![ZERO; n],
            scratch_k: vec![ZERO; n],
            scratch_acc: vec![ZERO; n],
            scratch_phi: vec![ZERO; nz],
        };
        sim.refresh_field();
        Ok(sim)
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn input(&self, t: f64) -> Complex64 {
        Complex64::new(self.protocol.signal.amplitude(t), 0.0)
    }

    /// Recomputes the stored field profile from the current amplitudes.
    pub fn refresh_field(&mut self) {
        let phi0 = self.input(self.t);
        Self::march(
            &self.model,
            &self.state.amplitudes,
            self.state.block,
            self.dz,
            phi0,
            &mut self.sources,
            &mut self.state.phi,
        );
    }

    fn march(
        model: &AtomicModel,
        y: &[Complex64],
        block: usize,
        dz: f64,
        phi0: Complex64,
        sources: &mut [Complex64],
        phi: &mut [Complex64],
    ) {
        for (i, s) in sources.iter_mut().enumerate() {
            *s = model.field_source(&y[i * block..(i + 1) * block]);
        }
        step_field(sources, dz, phi0, phi);
    }

    fn full_derivative(&mut self, t: f64, from_scratch: bool) {
        let block = self.state.block;
        let omega = self.protocol.control.rabi(t);
        let phi0 = self.input(t);
        let y: &[Complex64] = if from_scratch { &self.scratch_y } else { &self.state.amplitudes };
        Self::march(&self.model, y, block, self.dz, phi0, &mut self.sources, &mut self.scratch_phi);
        let model = if self.protocol.field_active(t) { &self.model } else { &self.unperturbed };
        for i in 0..self.state.nz {
            let r = i * block..(i + 1) * block;
            model.derivative(&y[r.clone()], self.scratch_phi[i], omega, &mut self.scratch_k[r]);
        }
    }

    /// Advances the whole grid by one RK4 step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.protocol.grid.dt;
        let t = self.t;
        let n = self.state.amplitudes.len();
        self.scratch_acc.copy_from_slice(&self.state.amplitudes);
        let stages = [(0.0, 1.0 / 6.0), (0.5, 1.0 / 3.0), (0.5, 1.0 / 3.0), (1.0, 1.0 / 6.0)];
        for (s, &(c, w)) in stages.iter().enumerate() {
            self.full_derivative(t + c * dt, s > 0);
            for i in 0..n {
                self.scratch_acc[i] += self.scratch_k[i] * (w * dt);
            }
            if s < 3 {
                let next = stages[s + 1].0 * dt;
                for i in 0..n {
                    self.scratch_y[i] = self.state.amplitudes[i] + self.scratch_k[i] * next;
                }
            }
        }
        std::mem::swap(&mut self.state.amplitudes, &mut self.scratch_acc);
        self.t = t + dt;
        self.refresh_field();
        let out = self.state.phi[self.state.nz - 1];
        if !out.re.is_finite() || !out.im.is_finite() {
            return Err(Error::Instability {
                time: self.t,
                reason: format!(
                    "non-finite field with dt = {:.3e} s, nz = {}; refine the grid",
                    dt, self.state.nz
                ),
            });
        }
        Ok(())
    }

    /// Output field Φ(L, τ).
    pub fn output(&self) -> Complex64 {
        self.state.phi[self.state.nz - 1]
    }

    pub fn observation_index(&self) -> usize {
        ((self.protocol.observation_z * (self.state.nz - 1) as f64).round() as usize).min(self.state.nz - 1)
    }

    fn sample(&self, state: &CoherenceState, t: f64) -> RecordSample {
        let omega = self.protocol.control.rabi(t);
        let i0 = self.protocol.signal.peak_intensity();
        let mut local = PolaritonDecomposition::default();
        let mut integrated = PolaritonDecomposition::default();
        if let Some(basis) = self.model.basis(omega) {
            let obs = self.observation_index();
            for i in 0..state.nz {
                let d = self.model.decompose(&basis, state.point(i), state.phi[i]);
                let w = if i == 0 || i + 1 == state.nz { 0.5 } else { 1.0 };
                integrated = integrated + scale_decomposition(d, w / (state.nz - 1) as f64);
                if i == obs {
                    local = d;
                }
            }
        }
        RecordSample { t, omega, transmittance: state.phi[state.nz - 1].norm_sqr() / i0, local, integrated }
    }

    /// Runs the configured protocol from its start to its end time.
    pub fn run(mut self) -> Result<SimulationRecord> {
        let dt = self.protocol.grid.dt;
        let t_end = self.protocol.t_end();
        let control = self.protocol.control.clone();
        let mut samples = vec![self.sample(&self.state, self.t)];
        let mut peak_optical = 0.0f64;
        let mut analytic_interval = None;

        while self.t < t_end - 0.5 * dt {
            self.step()?;
            samples.push(self.sample(&self.state, self.t));
            peak_optical = peak_optical.max(self.state.optical_norm());

            if self.protocol.analytic_storage && analytic_interval.is_none() {
                if let Some(t_on) = control.t_on {
                    let ready = t_on - self.t > 2.0 * dt * STORAGE_SAMPLE_STRIDE as f64
                        && control.dark_between(self.t, t_on)
                        && self.protocol.signal.negligible_from(self.t, SIGNAL_TAIL_THRESHOLD)
                        && self.state.optical_norm() <= OPTICAL_DECAY_THRESHOLD * peak_optical;
                    if ready {
                        let t0 = self.t;
                        self.skip_storage(t0, t_on, &mut samples)?;
                        analytic_interval = Some((t0, t_on));
                    }
                }
            }
        }

        let i0 = self.protocol.signal.peak_intensity();
        let mut e_in = 0.0;
        let mut e_leaked = 0.0;
        let mut e_retrieved = 0.0;
        for w in samples.windows(2) {
            let (a, b) = (w[0].t, w[1].t);
            let mid = 0.5 * (a + b);
            let input = 0.5
                * (self.protocol.signal.amplitude(a).powi(2) + self.protocol.signal.amplitude(b).powi(2))
                / i0;
            e_in += input * (b - a);
            let out = 0.5 * (w[0].transmittance + w[1].transmittance) * (b - a);
            if control.t_off.is_none_or(|off| mid < off) {
                e_leaked += out;
            }
            if control.t_on.is_some_and(|on| mid > on) {
                e_retrieved += out;
            }
        }
        let observation_index = self.observation_index();
        Ok(SimulationRecord {
            samples,
            e_in,
            e_leaked,
            e_retrieved,
            coupling: self.model.coupling(),
            observation_index,
            analytic_interval,
        })
    }

    /// Replaces stepping over the dark interval [t0, t_on] by exact transport,
    /// recording sparse samples on the way.
    fn skip_storage(&mut self, t0: f64, t_on: f64, samples: &mut Vec<RecordSample>) -> Result<()> {
        let dt = self.protocol.grid.dt;
        let stride = dt * STORAGE_SAMPLE_STRIDE as f64;
        let scheme = self.protocol.scheme.clone();
        let field = self.protocol.field;
        let start = self.state.clone();
        let mut k = 1;
        loop {
            let t = t0 + stride * k as f64;
            if t >= t_on - 0.5 * stride {
                break;
            }
            let mut s = start.clone();
            evolve_storage_analytic(&mut s, &scheme, &field, self.protocol.field_exposure(t0, t), 0.0)?;
            samples.push(self.sample(&s, t));
            k += 1;
        }
        evolve_storage_analytic(
            &mut self.state,
            &scheme,
            &field,
            self.protocol.field_exposure(t0, t_on),
            0.0,
        )?;
        self.t = t_on;
        self.refresh_field();
        samples.push(self.sample(&self.state, t_on));
        Ok(())
    }
}

fn scale_decomposition(d: PolaritonDecomposition, s: f64) -> PolaritonDecomposition {
    PolaritonDecomposition { p_d: d.p_d * s, p_b: d.p_b * s, p_out: d.p_out * s, v_norm_sq: d.v_norm_sq * s }
}

/// Builds and runs the simulator.
pub fn run_protocol(protocol: &Protocol) -> Result<SimulationRecord> {
    Simulator::new(protocol.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angmom::HalfInt;
    use std::f64::consts::PI;

    fn rb_model(field: MagneticField) -> (LevelScheme, AtomicModel) {
        let s = LevelScheme::rb85_d1();
        let pol = FieldPolarizations::new(1, 1).unwrap();
        let tables = build_coupling_tables(&s, &pol).unwrap();
        let g = calibrate_coupling(8.0, &s, 3e-3, &tables).unwrap();
        let m = AtomicModel::new(&s, &pol, g, &field).unwrap();
        (s, m)
    }

    fn random_hf(model: &AtomicModel) -> Vec<Complex64> {
        let mut y = vec![ZERO; model.block()];
        for (i, z) in y[..model.n_hf()].iter_mut().enumerate() {
            *z = Complex64::new((1.7 * i as f64).sin(), (0.6 * i as f64 + 0.3).cos());
        }
        y
    }

    #[test]
    fn control_envelope_shape() {
        let c = ControlEnvelope { omega_on: 2.0, ramp: 20e-9, t_off: Some(0.0), t_on: Some(2e-6) };
        assert_eq!(c.rabi(-1e-9), 2.0);
        assert!((c.rabi(10e-9) - 1.0).abs() < 1e-12);
        assert_eq!(c.rabi(20e-9), 0.0);
        assert_eq!(c.rabi(1e-6), 0.0);
        assert!((c.rabi(2.01e-6) - 1.0).abs() < 1e-9);
        assert_eq!(c.rabi(3e-6), 2.0);
        assert!(c.dark_between(20e-9, 2e-6));
        assert!(!c.dark_between(10e-9, 2e-6));
        let bad = ControlEnvelope { t_on: Some(10e-9), ..c };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn gaussian_fwhm_is_intensity_width() {
        let s = SignalEnvelope::Gaussian { fwhm: 120e-9, peak_time: -60e-9, amplitude: 2.0 };
        let half = s.amplitude(0.0).powi(2) / s.peak_intensity();
        assert!((half - 0.5).abs() < 1e-12);
        assert!(s.negligible_from(400e-9, 1e-14));
        assert!(!s.negligible_from(-100e-9, 1e-14));
    }

    #[test]
    fn free_decay_without_drive() {
        let (_, model) = rb_model(MagneticField::zero());
        let mut y = random_hf(&model);
        let nhf = model.n_hf();
        for z in y[nhf..].iter_mut() {
            *z = Complex64::new(0.5, -0.25);
        }
        let y0 = y.clone();
        let gamma = 2.0 * model.half_gamma;
        let dt = 0.25e-9;
        for n in 0..400 {
            model.step_atoms(&mut y, ZERO, &|_| 0.0, n as f64 * dt, dt).unwrap();
        }
        let t = 400.0 * dt;
        for i in 0..nhf {
            assert_eq!(y[i], y0[i]);
        }
        let decay = (-0.5 * gamma * t).exp();
        for i in nhf..y.len() {
            assert!((y[i] - y0[i] * decay).norm() < 1e-10);
        }
    }

    #[test]
    fn longitudinal_field_is_pure_phase() {
        let field = MagneticField::from_larmor_period(8e-6, -1.0 / 3.0, 0.0).unwrap();
        let (s, model) = rb_model(field);
        let mut y = random_hf(&model);
        let y0 = y.clone();
        let dt = 1e-9;
        let steps = 700;
        for n in 0..steps {
            model.step_atoms(&mut y, ZERO, &|_| 0.0, n as f64 * dt, dt).unwrap();
        }
        let t = steps as f64 * dt;
        let wb = field.omega_b();
        for (k, m) in s.f_g.projections().enumerate() {
            for (j, mp) in s.f_gp.projections().enumerate() {
                let phase = (s.g_g * m.as_f64() - s.g_gp * mp.as_f64()) * wb * t;
                let want = y0[k * 7 + j] * Complex64::from_polar(1.0, phase);
                assert!((y[k * 7 + j] - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn ode_matches_rotation_transport() {
        // Fixes the sign of the precession terms.
        let field = MagneticField::from_larmor_period(8e-6, -1.0 / 3.0, PI / 5.0).unwrap();
        let (s, model) = rb_model(field);
        let y0 = random_hf(&model);
        let t_s = 8e-6 / 3.0;
        let steps = 4000;
        let dt = t_s / steps as f64;
        let mut y = y0.clone();
        for n in 0..steps {
            model.step_atoms(&mut y, ZERO, &|_| 0.0, n as f64 * dt, dt).unwrap();
        }
        let mut state = CoherenceState::zeros(&model, 1);
        state.amplitudes.copy_from_slice(&y0);
        evolve_storage_analytic(&mut state, &s, &field, t_s, 0.0).unwrap();
        let scale = y0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in state.amplitudes.iter().zip(&y).take(model.n_hf()) {
            assert!((a - b).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn analytic_transport_edges() {
        let field = MagneticField::from_larmor_period(8e-6, -1.0 / 3.0, 0.9).unwrap();
        let (s, model) = rb_model(field);
        let y0 = random_hf(&model);
        let mut state = CoherenceState::zeros(&model, 3);
        for i in 0..3 {
            state.point_mut(i).copy_from_slice(&y0);
        }
        let before = state.clone();
        evolve_storage_analytic(&mut state, &s, &field, 0.0, 0.0).unwrap();
        assert_eq!(state, before);

        // Full Larmor period with g_g′ = −g_g: back to the start up to a global phase.
        evolve_storage_analytic(&mut state, &s, &field, 8e-6, 0.0).unwrap();
        let a = state.point(1);
        let phase = a[0] / y0[0];
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        for i in 0..model.n_hf() {
            assert!((a[i] - y0[i] * phase).norm() < 1e-10);
        }

        assert!(matches!(
            evolve_storage_analytic(&mut state, &s, &field, 1e-6, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn step_field_free_propagation() {
        let sources = vec![ZERO; 11];
        let mut out = vec![ZERO; 11];
        step_field(&sources, 1e-4, Complex64::new(0.3, 0.1), &mut out);
        assert!(out.iter().all(|z| *z == Complex64::new(0.3, 0.1)));
    }

    #[test]
    fn half_integer_levels_are_supported() {
        let s = LevelScheme {
            f_g: HalfInt::from_twice(1),
            f_gp: HalfInt::from_twice(3),
            f_e: HalfInt::from_twice(3),
            g_g: -2.0 / 3.0,
            g_gp: 2.0 / 3.0,
            ..LevelScheme::rb85_d1()
        };
        let pol = FieldPolarizations::new(1, 1).unwrap();
        let field = MagneticField::new(0.3, 0.4).unwrap();
        let tables = build_coupling_tables(&s, &pol).unwrap();
        let g = calibrate_coupling(2.0, &s, 3e-3, &tables).unwrap();
        let model = AtomicModel::new(&s, &pol, g, &field).unwrap();
        assert_eq!(model.block(), 2 * (4 + 4));
        let mut y = vec![ZERO; model.block()];
        y[1] = Complex64::new(1.0, 0.0);
        let y0 = y.clone();
        let dt = 2e-9;
        for n in 0..500 {
            model.step_atoms(&mut y, ZERO, &|_| 0.0, n as f64 * dt, dt).unwrap();
        }
        let mut state = CoherenceState::zeros(&model, 1);
        state.amplitudes.copy_from_slice(&y0);
        evolve_storage_analytic(&mut state, &s, &field, 1e-6, 0.0).unwrap();
        for (a, b) in state.amplitudes.iter().zip(&y).take(model.n_hf()) {
            assert!((a - b).norm() < 1e-8);
        }
    }
}
