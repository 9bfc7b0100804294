//! Command-line front end.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides, Resolved};
use crate::dynamics::run_protocol;
use crate::error::{Error, Result};
use crate::output::{self, ConfigEcho};
use crate::polariton::revival_surface;
use crate::scheme::build_coupling_tables;
use crate::spectra::transparency_scan;

#[derive(Debug, Parser)]
#[command(name = "eit-storage", version, about = "EIT light storage in degenerate Zeeman manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check EIT feasibility and print derived constants.
    Check(Common),
    /// Susceptibility and transmittance versus detuning.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Control Rabi frequencies in units of Γ_e.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5")]
        omega_gamma: Vec<f64>,
        /// Detuning range `lo:hi` in units of Γ_e.
        #[arg(long, default_value = "-5:5", allow_hyphen_values = true)]
        delta_range_gamma: String,
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
    /// Full store-and-retrieve simulation.
    Simulate(Common),
    /// Analytic retrieval efficiency over storage time and field angle.
    Revival {
        #[command(flatten)]
        common: Common,
        /// Number of storage times from 0 to `t_max_larmor` Larmor periods.
        #[arg(long, default_value_t = 257)]
        t_points: usize,
        #[arg(long, default_value_t = 1.0)]
        t_max_larmor: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment description (JSON); defaults to the reference experiment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Field angle(s) in rad: `a,b,c` or `start:stop:n`; `pi` is understood, e.g. `pi/4`.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    #[arg(long, conflicts_with = "larmor_period_us")]
    pub b_gauss: Option<f64>,
    #[arg(long)]
    pub larmor_period_us: Option<f64>,
    /// Dark storage time between the two control ramps.
    #[arg(long)]
    pub storage_us: Option<f64>,
    #[arg(long)]
    pub grid_nz: Option<usize>,
    #[arg(long)]
    pub grid_dt_ns: Option<f64>,
}

impl Common {
    fn load(&self, single_theta: bool) -> Result<(ExperimentConfig, Option<Vec<f64>>)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::reference(8.0),
        };
        let thetas = self.theta.as_deref().map(parse_angles).transpose()?;
        let theta_rad = match &thetas {
            Some(t) if single_theta => {
                if t.len() != 1 {
                    return Err(Error::Config("this command takes a single --theta value".into()));
                }
                Some(t[0])
            }
            _ => None,
        };
        cfg.apply(&Overrides {
            gauss: self.b_gauss,
            larmor_period_us: self.larmor_period_us,
            storage_us: self.storage_us,
            nz: self.grid_nz,
            dt_ns: self.grid_dt_ns,
            theta_rad,
        })?;
        Ok((cfg, thetas))
    }
}

fn parse_number(token: &str) -> Result<f64> {
    let t = token.trim();
    let bad = || Error::Config(format!("cannot parse angle `{token}`"));
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim().parse::<f64>().map_err(|_| bad())?),
        None => (t, 1.0),
    };
    let value = match num.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.trim().trim_end_matches('*').trim();
            let c = match coef {
                "" => 1.0,
                "-" => -1.0,
                c => c.parse::<f64>().map_err(|_| bad())?,
            };
            c * PI
        }
        None => num.parse::<f64>().map_err(|_| bad())?,
    };
    let v = value / den;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// `a,b,c` or `start:stop:n` (inclusive, n ≥ 2).
pub fn parse_angles(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(parse_number).collect(),
        3 => {
            let a = parse_number(parts[0])?;
            let b = parse_number(parts[1])?;
            let n: usize =
                parts[2].trim().parse().map_err(|_| Error::Config(format!("bad point count in `{spec}`")))?;
            if n < 2 {
                return Err(Error::Config(format!("range `{spec}` needs at least 2 points")));
            }
            Ok(linspace(a, b, n))
        }
        _ => Err(Error::Config(format!("cannot parse `{spec}`; use a,b,c or start:stop:n"))),
    }
}

/// Inclusive uniform grid with the endpoint reproduced exactly.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

fn parse_range(spec: &str) -> Result<(f64, f64)> {
    let (a, b) =
        spec.split_once(':').ok_or_else(|| Error::Config(format!("range `{spec}` must be lo:hi")))?;
    let parse =
        |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number in `{spec}`")));
    Ok((parse(a)?, parse(b)?))
}

fn report(r: &Resolved) {
    let p = &r.protocol;
    let d = &r.derived;
    println!("scheme: F_g = {}, F_g' = {}, F_e = {}", p.scheme.f_g, p.scheme.f_gp, p.scheme.f_e);
    println!("polarizations: alpha = {:+}, beta = {:+}", p.pol.alpha, p.pol.beta);
    println!("EIT feasibility: {}", r.feasibility);
    println!("optical thickness d = {:.6}", d.optical_thickness);
    println!("coupling N|kappa|^2 = {:.6e}", d.coupling);
    println!("control Rabi frequency = {:.6e} rad/s", d.rabi_rad_s);
    println!("group velocity = {:.6e} m/s (delay {:.3} ns)", d.group_velocity_m_s, d.group_delay_s * 1e9);
    println!("field = {:.6} G at theta = {:.6} rad", d.field_gauss, p.field.theta);
    println!("Larmor period T_L = {:.6} us", d.larmor_period_s * 1e6);
    println!("time step limit = {:.4} ns", d.dt_limit_s * 1e9);
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Check(common) => {
            let (cfg, _) = common.load(true)?;
            let r = cfg.resolve()?;
            report(&r);
            r.protocol.validate()?;
            println!("ok");
        }
        Command::Spectrum { common, omega_gamma, delta_range_gamma, points } => {
            let (cfg, _) = common.load(true)?;
            let r = cfg.resolve()?;
            let p = &r.protocol;
            let tables = build_coupling_tables(&p.scheme, &p.pol)?;
            let (lo, hi) = parse_range(&delta_range_gamma)?;
            let g = p.scheme.gamma_e;
            let mut index = String::from("index,omega_over_gamma,omega_rad_s,window_width_rad_s\n");
            for (i, &w) in omega_gamma.iter().enumerate() {
                let scan = transparency_scan(
                    &p.scheme,
                    &tables,
                    p.d_alpha,
                    p.length,
                    w * g,
                    (lo * g, hi * g),
                    points,
                )?;
                output::write(&common.out, &format!("spectrum_{i}.csv"), &output::spectrum_csv(&scan))?;
                index.push_str(&format!(
                    "{i},{},{},{}\n",
                    output::num(w),
                    output::num(w * g),
                    output::num(scan.window_width(0.5))
                ));
                println!("spectrum_{i}.csv: Omega = {w} Gamma_e");
            }
            output::write(&common.out, "spectrum_index.csv", &index)?;
        }
        Command::Simulate(common) => {
            let (cfg, _) = common.load(true)?;
            let r = cfg.resolve()?;
            let record = run_protocol(&r.protocol)?;
            output::write(&common.out, "timeseries.csv", &output::timeseries_csv(&record))?;
            output::write(&common.out, "timeseries_integrated.csv", &output::integrated_csv(&record))?;
            let echo = ConfigEcho { input: &cfg, resolved: &r.protocol, derived: &r.derived };
            output::write(&common.out, "summary.json", &output::summary_json(&record, echo)?)?;
            println!(
                "E_in = {:.6e}, E_leaked = {:.6e}, E_retrieved = {:.6e}, efficiency = {:.4}%",
                record.e_in,
                record.e_leaked,
                record.e_retrieved,
                100.0 * record.efficiency()
            );
        }
        Command::Revival { common, t_points, t_max_larmor } => {
            let (cfg, thetas) = common.load(false)?;
            let r = cfg.resolve()?;
            let p = &r.protocol;
            let tables = build_coupling_tables(&p.scheme, &p.pol)?;
            if t_points < 2 || !(t_max_larmor > 0.0) {
                return Err(Error::Config("revival needs t_points >= 2 and t_max_larmor > 0".into()));
            }
            if p.field.gauss == 0.0 {
                return Err(Error::Config("revival needs a nonzero magnetic field".into()));
            }
            let thetas = thetas.unwrap_or_else(|| linspace(0.0, FRAC_PI_2, 33));
            let tl = r.derived.larmor_period_s;
            let times = linspace(0.0, t_max_larmor * tl, t_points);
            let surface = revival_surface(&p.scheme, &tables, p.field.gauss, &thetas, &times)?;
            output::write(&common.out, "revival_surface.csv", &output::surface_csv(&surface))?;
            if thetas.len() == 1 {
                output::write(&common.out, "revival_curve.csv", &output::curve_csv(&surface, 0))?;
            }
            println!(
                "revival_surface.csv: {} storage times x {} angles, T_L = {:.6} us",
                times.len(),
                thetas.len(),
                tl * 1e6
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_lists_and_ranges() {
        assert_eq!(parse_angles("0,0.5").unwrap(), vec![0.0, 0.5]);
        assert_eq!(parse_angles("pi/4").unwrap(), vec![PI / 4.0]);
        assert_eq!(parse_angles("0.5pi").unwrap(), vec![0.5 * PI]);
        assert_eq!(parse_angles("3*pi/8").unwrap(), vec![3.0 * PI / 8.0]);
        let r = parse_angles("0:pi/2:5").unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r[4], FRAC_PI_2);
        assert!((r[2] - PI / 4.0).abs() < 1e-15);
        assert!(parse_angles("0:1:1").is_err());
        assert!(parse_angles("abc").is_err());
        assert!(parse_angles("1:2").is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["eit-storage", "revival", "--theta", "0:pi/2:3", "--t-points", "9"])
            .unwrap();
        assert!(matches!(cli.command, Command::Revival { t_points: 9, .. }));
        let clash =
            Cli::try_parse_from(["eit-storage", "simulate", "--b-gauss", "0.3", "--larmor-period-us", "8"]);
        assert!(clash.is_err());
        let neg = Cli::try_parse_from(["eit-storage", "spectrum", "--delta-range-gamma", "-2:2"]).unwrap();
        assert!(matches!(neg.command, Command::Spectrum { .. }));
    }
}
