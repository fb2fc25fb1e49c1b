//! Monte Carlo experiment runner: scenario configuration, sweeps over the
//! pilot count and the array size, RMSE aggregation against the bound, and
//! CSV emission.
//!
//! Trials run in parallel over per-trial generator substreams; aggregation
//! follows trial index order, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

use crate::channel::{dbm_to_watts, simulate_pilot_field, ChannelGains, RadioConfig};
use crate::crb::{crb_diag, CrbResult};
use crate::error::{Error, Result};
use crate::estimators::{closed_form_report, estimate_pipeline_full, LsSettings};
use crate::geometry::{SphericalPosition, UpaConfig};

/// One Monte Carlo experiment: fixed array, radio, user, and seed.
#[derive(Clone)]
pub struct Scenario {
    pub cfg: UpaConfig,
    pub radio: RadioConfig,
    pub gains: ChannelGains,
    pub user: SphericalPosition,
    pub trials: u32,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        self.user.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    ClosedForm,
    LeastSquares,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::ClosedForm => "closed_form",
            EstimatorKind::LeastSquares => "least_squares",
        })
    }
}

/// Aggregated result for one estimator at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    /// K for pilot sweeps, N for size sweeps.
    pub sweep_value: f64,
    pub estimator: EstimatorKind,
    pub rmse_r: f64,
    pub rmse_theta: f64,
    pub rmse_phi: f64,
    pub sqrt_crb_r: f64,
    pub sqrt_crb_theta: f64,
    pub sqrt_crb_phi: f64,
    /// Trials where the closed form raised a designated estimation error.
    pub failure_count: u32,
    pub trials: u32,
}

/// Signed per-trial errors in (r, theta, phi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial: u32,
    /// None when the closed form raised a designated estimation error.
    pub closed_form_errors: Option<[f64; 3]>,
    pub ls_errors: [f64; 3],
    pub ls_iterations: u32,
    pub ls_converged: bool,
}

/// Rows plus the per-trial records they were aggregated from.
#[derive(Debug, Clone)]
pub struct McRun {
    pub rows: [RmseRow; 2],
    pub records: Vec<TrialRecord>,
}

/// Generator for one trial: one fixed-seed stream per trial index, so any
/// subset of trials reproduces bitwise regardless of scheduling.
pub fn trial_rng(master_seed: u64, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

/// The variance bound columns for a scenario; the zero-noise limit reports a
/// zero bound rather than unbounded information.
fn scenario_crb(s: &Scenario) -> Result<CrbResult> {
    if s.radio.noise_power() == 0.0 {
        return Ok(CrbResult {
            var_r: 0.0,
            var_theta: 0.0,
            var_phi: 0.0,
            sqrt_crb_r: 0.0,
        });
    }
    crb_diag(&s.user, &s.cfg, &s.gains, &s.radio)
}

fn rmse(records: &[TrialRecord], pick: impl Fn(&TrialRecord) -> Option<[f64; 3]>) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut count = 0u32;
    for rec in records {
        if let Some(errs) = pick(rec) {
            for (a, e) in acc.iter_mut().zip(errs) {
                *a += e * e;
            }
            count += 1;
        }
    }
    if count == 0 {
        return [f64::NAN; 3];
    }
    acc.map(|a| (a / count as f64).sqrt())
}

/// Runs all trials of a scenario. Designated closed-form estimation errors
/// are counted as failures and excluded from the closed-form RMSE; the
/// least-squares leg always produces an estimate via the fallback start.
pub fn run_monte_carlo(s: &Scenario, settings: &LsSettings) -> Result<McRun> {
    s.validate()?;
    settings.validate()?;
    let crb = scenario_crb(s)?;
    let records: Vec<TrialRecord> = (0..s.trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialRecord> {
            let mut rng = trial_rng(s.master_seed, trial);
            let field = simulate_pilot_field(&s.user, &s.cfg, &s.gains, &s.radio, &mut rng)?;
            let full = estimate_pipeline_full(&field, &s.cfg, settings)?;
            let errors = |p: &SphericalPosition| {
                [p.r - s.user.r, p.theta - s.user.theta, p.phi - s.user.phi]
            };
            let closed_form_errors = match &full.closed_form {
                Ok(abc) => Some(errors(&closed_form_report(abc).spherical)),
                Err(_) => None,
            };
            Ok(TrialRecord {
                trial,
                closed_form_errors,
                ls_errors: errors(&full.least_squares.spherical),
                ls_iterations: full.least_squares.iterations,
                ls_converged: full.least_squares.flags.ls_converged,
            })
        })
        .collect::<Result<_>>()?;
    let failures = records
        .iter()
        .filter(|r| r.closed_form_errors.is_none())
        .count() as u32;
    let cf = rmse(&records, |r| r.closed_form_errors);
    let ls = rmse(&records, |r| Some(r.ls_errors));
    let row = |estimator, e: [f64; 3], failure_count| RmseRow {
        sweep_value: s.radio.pilot_count() as f64,
        estimator,
        rmse_r: e[0],
        rmse_theta: e[1],
        rmse_phi: e[2],
        sqrt_crb_r: crb.sqrt_crb_r,
        sqrt_crb_theta: crb.sqrt_crb_theta(),
        sqrt_crb_phi: crb.sqrt_crb_phi(),
        failure_count,
        trials: s.trials,
    };
    Ok(McRun {
        rows: [
            row(EstimatorKind::ClosedForm, cf, failures),
            row(EstimatorKind::LeastSquares, ls, 0),
        ],
        records,
    })
}

/// One Monte Carlo run per pilot count, common seed across sweep points.
pub fn sweep_k(s: &Scenario, k_values: &[u32], settings: &LsSettings) -> Result<Vec<RmseRow>> {
    if k_values.is_empty() {
        return Err(Error::InvalidConfig("empty pilot-count sweep".into()));
    }
    let mut rows = Vec::with_capacity(2 * k_values.len());
    for &k in k_values {
        let mut point = s.clone();
        point.radio = s.radio.with_pilot_count(k)?;
        let run = run_monte_carlo(&point, settings)?;
        rows.extend(run.rows.into_iter().map(|mut row| {
            row.sweep_value = k as f64;
            row
        }));
    }
    Ok(rows)
}

/// One Monte Carlo run per array half-size, geometry rebuilt each time.
pub fn sweep_n(s: &Scenario, n_values: &[i64], settings: &LsSettings) -> Result<Vec<RmseRow>> {
    if n_values.is_empty() {
        return Err(Error::InvalidConfig("empty array-size sweep".into()));
    }
    let mut rows = Vec::with_capacity(2 * n_values.len());
    for &n in n_values {
        let mut point = s.clone();
        point.cfg = UpaConfig::new(n, s.cfg.spacing(), s.cfg.wavelength())?;
        let run = run_monte_carlo(&point, settings)?;
        rows.extend(run.rows.into_iter().map(|mut row| {
            row.sweep_value = n as f64;
            row
        }));
    }
    Ok(rows)
}

/// One grid point of the bound tabulation; None bounds mark degenerate
/// geometries (blank cells in the CSV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbMapRow {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub crb: Option<CrbResult>,
}

/// Tabulates the bound over the cross product of ranges and angle pairs.
/// Degenerate geometries become flagged rows; configuration problems error.
pub fn crb_map(
    cfg: &UpaConfig,
    radio: &RadioConfig,
    gains: &ChannelGains,
    r_values: &[f64],
    angle_pairs: &[(f64, f64)],
) -> Result<Vec<CrbMapRow>> {
    if r_values.is_empty() || angle_pairs.is_empty() {
        return Err(Error::InvalidConfig("empty bound-map grid".into()));
    }
    let mut rows = Vec::with_capacity(r_values.len() * angle_pairs.len());
    for &r in r_values {
        for &(theta, phi) in angle_pairs {
            let p = SphericalPosition::new(r, theta, phi)?;
            let crb = match crb_diag(&p, cfg, gains, radio) {
                Ok(c) => Some(c),
                Err(Error::DegenerateGeometry) => None,
                Err(e) => return Err(e),
            };
            rows.push(CrbMapRow { r, theta, phi, crb });
        }
    }
    Ok(rows)
}

pub const RMSE_CSV_HEADER: &str =
    "sweep,estimator,rmse_r_m,rmse_theta_rad,rmse_phi_rad,crb_r_m,crb_theta_rad,crb_phi_rad,failures,trials";

pub const CRB_MAP_CSV_HEADER: &str =
    "r_m,theta_rad,phi_rad,crb_r_m,crb_theta_rad,crb_phi_rad,degenerate";

pub const TRIAL_CSV_HEADER: &str =
    "trial,estimator,err_r_m,err_theta_rad,err_phi_rad,iterations,converged";

/// Nine significant digits, fixed exponent form.
fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Sweep values are pilot counts or array sizes; print them as integers.
fn fmt_sweep(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        fmt_float(v)
    }
}

/// Unit conversion applied to the angle columns just before printing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    Radians,
    Degrees,
}

impl AngleUnit {
    fn factor(self) -> f64 {
        match self {
            AngleUnit::Radians => 1.0,
            AngleUnit::Degrees => 180.0 / std::f64::consts::PI,
        }
    }

    fn rewrite_header(self, header: &str) -> String {
        match self {
            AngleUnit::Radians => header.to_owned(),
            AngleUnit::Degrees => header.replace("_rad", "_deg"),
        }
    }
}

pub fn write_rmse_csv<W: Write>(rows: &[RmseRow], unit: AngleUnit, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{}", unit.rewrite_header(RMSE_CSV_HEADER))?;
    let f = unit.factor();
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_sweep(row.sweep_value),
            row.estimator,
            fmt_float(row.rmse_r),
            fmt_float(row.rmse_theta * f),
            fmt_float(row.rmse_phi * f),
            fmt_float(row.sqrt_crb_r),
            fmt_float(row.sqrt_crb_theta * f),
            fmt_float(row.sqrt_crb_phi * f),
            row.failure_count,
            row.trials,
        )?;
    }
    Ok(())
}

pub fn write_crb_map_csv<W: Write>(
    rows: &[CrbMapRow],
    unit: AngleUnit,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "{}", unit.rewrite_header(CRB_MAP_CSV_HEADER))?;
    let f = unit.factor();
    for row in rows {
        let (crb_r, crb_theta, crb_phi, degenerate) = match &row.crb {
            Some(c) => (
                fmt_float(c.sqrt_crb_r),
                fmt_float(c.sqrt_crb_theta() * f),
                fmt_float(c.sqrt_crb_phi() * f),
                0,
            ),
            None => (String::new(), String::new(), String::new(), 1),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_float(row.r),
            fmt_float(row.theta * f),
            fmt_float(row.phi * f),
            crb_r,
            crb_theta,
            crb_phi,
            degenerate,
        )?;
    }
    Ok(())
}

/// Per-trial sidecar: blank error cells for failed closed-form trials.
pub fn write_trial_csv<W: Write>(
    records: &[TrialRecord],
    unit: AngleUnit,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "{}", unit.rewrite_header(TRIAL_CSV_HEADER))?;
    let f = unit.factor();
    for rec in records {
        match &rec.closed_form_errors {
            Some(e) => writeln!(
                w,
                "{},closed_form,{},{},{},0,1",
                rec.trial,
                fmt_float(e[0]),
                fmt_float(e[1] * f),
                fmt_float(e[2] * f),
            )?,
            None => writeln!(w, "{},closed_form,,,,0,0", rec.trial)?,
        }
        writeln!(
            w,
            "{},least_squares,{},{},{},{},{}",
            rec.trial,
            fmt_float(rec.ls_errors[0]),
            fmt_float(rec.ls_errors[1] * f),
            fmt_float(rec.ls_errors[2] * f),
            rec.ls_iterations,
            u8::from(rec.ls_converged),
        )?;
    }
    Ok(())
}

/// JSON mirror of a Scenario: powers in dBm, lengths in meters, angles in
/// radians. Missing trials and seed take the defaults (200, 0); gain factors
/// default to unit transmit gain and an aperture-matched receive gain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub array: ArraySection,
    pub radio: RadioSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsSection>,
    pub user: UserSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub half_size: i64,
    pub spacing_m: f64,
    pub wavelength_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub power_dbm: f64,
    pub noise_dbm: f64,
    pub pilot_count: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub g1: f64,
    pub g2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub r_m: f64,
    pub theta_rad: f64,
    pub phi_rad: f64,
}

pub const DEFAULT_TRIALS: u32 = 200;

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("scenario JSON: {e}")))
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let cfg = UpaConfig::new(
            self.array.half_size,
            self.array.spacing_m,
            self.array.wavelength_m,
        )?;
        let radio = RadioConfig::new(
            dbm_to_watts(self.radio.power_dbm),
            dbm_to_watts(self.radio.noise_dbm),
            self.radio.pilot_count,
        )?;
        let gains = match self.gains {
            Some(g) => ChannelGains::constant(g.g1, g.g2)?,
            None => ChannelGains::isotropic(cfg.wavelength()),
        };
        let user = SphericalPosition::new(self.user.r_m, self.user.theta_rad, self.user.phi_rad)?;
        Ok(Scenario {
            cfg,
            radio,
            gains,
            user,
            trials: self.trials.unwrap_or(DEFAULT_TRIALS),
            master_seed: self.master_seed.unwrap_or(0),
        })
    }
}

/// The simulation setup used throughout: half-wavelength spacing at 10 mm
/// wavelength, 23 dBm transmit power over a -114 dBm noise floor, 50 pilots,
/// user at 5 m, (pi/6, pi/4).
pub fn reference_scenario() -> Scenario {
    Scenario {
        cfg: UpaConfig::new(10, 0.005, 0.01).expect("valid reference array"),
        radio: RadioConfig::new(dbm_to_watts(23.0), dbm_to_watts(-114.0), 50)
            .expect("valid reference radio"),
        gains: ChannelGains::isotropic(0.01),
        user: SphericalPosition::new(5.0, std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_4)
            .expect("valid reference user"),
        trials: DEFAULT_TRIALS,
        master_seed: 0,
    }
}
