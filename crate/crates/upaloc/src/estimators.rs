//! Closed-form and least-squares estimators for the transformed unknowns (A, B, C).
//!
//! The closed form inverts the three center-line sums in one shot; the
//! least-squares estimator minimizes the squared mismatch between every
//! measured summed phase-difference and its (A, B, C) model over both axes,
//! via Levenberg-Marquardt with feasible-region backtracking, initialized
//! from the closed form or from a deterministic far-field fallback.

use crate::channel::PilotField;
use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_from_abc, spherical_from_abc, AbcEstimate, CartesianPosition, SphericalPosition,
    UpaConfig,
};
use crate::phase::{adjacent_phase_diffs, build_phase_sums, lookup_sum, PhaseSumSet, SumIndex};

/// The three center-line baselines scaled to meters: `delta_v1` over (0,0) to
/// (0,N), `delta_v2` over (0,-N) to (0,0), `delta_h` over (-N,0) to (N,0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterLineSums {
    pub delta_v1: f64,
    pub delta_v2: f64,
    pub delta_h: f64,
}

/// Levenberg-Marquardt controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsSettings {
    pub max_iterations: u32,
    /// Relative step-norm threshold declaring convergence.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

impl LsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("step_tolerance", self.step_tolerance),
            ("initial_damping", self.initial_damping),
            ("damping_up", self.damping_up),
            ("damping_down", self.damping_down),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Diagnostics attached to an estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimateFlags {
    /// Cartesian y-radicand was negative and clamped to zero.
    pub clamped_y: bool,
    /// An arccos argument left [-1, 1] during spherical recovery.
    pub clamped_arccos: bool,
    /// A - C^2 <= 0: azimuth unidentifiable (z-axis geometry).
    pub azimuth_degenerate: bool,
    /// Closed-form denominator fell below the far-field degeneracy threshold.
    pub near_degenerate_denominator: bool,
    /// Closed form failed; least squares started from the fallback.
    pub used_fallback_init: bool,
    /// Levenberg-Marquardt reached its step tolerance.
    pub ls_converged: bool,
}

/// Estimate in all three coordinate systems plus solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub abc: AbcEstimate,
    pub spherical: SphericalPosition,
    pub cartesian: CartesianPosition,
    pub flags: EstimateFlags,
    pub iterations: u32,
    /// Sum of squared residuals (radians^2) at the returned estimate.
    pub final_objective: f64,
}

/// Closed-form and least-squares results for one pilot field.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    /// Closed-form estimate, or the designated error that triggered the fallback.
    pub closed_form: std::result::Result<AbcEstimate, Error>,
    pub least_squares: EstimateReport,
}

/// Scales the three center-line sums by lambda / (2 pi) into meters.
pub fn extract_center_sums(sums: &PhaseSumSet) -> Result<CenterLineSums> {
    let cfg = sums.config();
    let nn = cfg.half_size();
    if nn < 1 {
        return Err(Error::InsufficientAperture);
    }
    let to_meters = cfg.wavelength() / (2.0 * std::f64::consts::PI);
    Ok(CenterLineSums {
        delta_v1: to_meters * lookup_sum(sums, &SumIndex::vertical(0, nn, 0))?,
        delta_v2: to_meters * lookup_sum(sums, &SumIndex::vertical(-nn, 0, 0))?,
        delta_h: to_meters * lookup_sum(sums, &SumIndex::horizontal(-nn, nn, 0))?,
    })
}

/// Far-field degeneracy guard for the closed-form denominator:
/// 1e3 * eps * (delta_v1^2 + delta_v2^2 + 2 d^2 N^2) / (2 d N).
pub fn degeneracy_threshold(cs: &CenterLineSums, cfg: &UpaConfig) -> f64 {
    let dn = cfg.spacing() * cfg.half_size() as f64;
    1e3 * f64::EPSILON * (cs.delta_v1 * cs.delta_v1 + cs.delta_v2 * cs.delta_v2 + 2.0 * dn * dn)
        / (2.0 * dn)
}

/// Single-shot inversion of the center-line sums into (A, B, C).
pub fn closed_form_estimate(cs: &CenterLineSums, cfg: &UpaConfig) -> Result<AbcEstimate> {
    if cfg.half_size() < 1 {
        return Err(Error::InsufficientAperture);
    }
    let dn = cfg.spacing() * cfg.half_size() as f64;
    let den = cs.delta_v1 - cs.delta_v2;
    let threshold = degeneracy_threshold(cs, cfg);
    if den.abs() <= threshold {
        return Err(Error::RangeUnidentifiable {
            den: den.abs(),
            threshold,
        });
    }
    let r_signed = (cs.delta_v1 * cs.delta_v1 + cs.delta_v2 * cs.delta_v2 - 2.0 * dn * dn)
        / (2.0 * den);
    if r_signed <= 0.0 {
        return Err(Error::InconsistentMeasurement(r_signed));
    }
    let a = r_signed * r_signed;
    let c = (2.0 * cs.delta_v1 * r_signed + dn * dn - cs.delta_v1 * cs.delta_v1) / (2.0 * dn);
    let b_radicand = 4.0 * a + 4.0 * dn * dn - cs.delta_h * cs.delta_h;
    if b_radicand < 0.0 {
        return Err(Error::InfeasibleMeasurement(b_radicand));
    }
    let b = cs.delta_h * b_radicand.sqrt() / (4.0 * dn);
    Ok(AbcEstimate::new(a, b, c))
}

/// Deterministic initialization for when the closed form fails: far-field
/// slopes for B and C at a presumed range of ten array apertures.
pub fn fallback_init(cs: &CenterLineSums, cfg: &UpaConfig) -> AbcEstimate {
    let dn = cfg.spacing() * cfg.half_size() as f64;
    let r0 = 10.0 * 2.0 * dn;
    let b = cs.delta_h * r0 / (2.0 * dn);
    let c = (cs.delta_v1 + cs.delta_v2) * r0 / (2.0 * dn);
    project_feasible(AbcEstimate::new(r0 * r0, b, c))
}

/// Pulls (B, C) radially inside the disk B^2 + C^2 <= A; A must be positive.
fn project_feasible(e: AbcEstimate) -> AbcEstimate {
    let planar = e.b * e.b + e.c * e.c;
    if planar <= e.a {
        return e;
    }
    let scale = (e.a / planar).sqrt() * (1.0 - 1e-12);
    AbcEstimate::new(e.a, e.b * scale, e.c * scale)
}

struct LineBuffers {
    u: Vec<f64>,
    inv: Vec<f64>,
}

/// Square-root model terms for one line (fixed perpendicular index), varying
/// index from -N to N. Returns the radicand when it is not positive.
fn fill_line(
    e: &AbcEstimate,
    cfg: &UpaConfig,
    horizontal: bool,
    fixed: i64,
    buf: &mut LineBuffers,
) -> std::result::Result<(), f64> {
    let nn = cfg.half_size();
    let d = cfg.spacing();
    let f = fixed as f64;
    for (slot, varying) in (-nn..=nn).enumerate() {
        let i = varying as f64;
        let rad = if horizontal {
            e.a + d * d * (i * i + f * f) - 2.0 * e.b * i * d - 2.0 * e.c * f * d
        } else {
            e.a + d * d * (f * f + i * i) - 2.0 * e.b * f * d - 2.0 * e.c * i * d
        };
        if rad <= 0.0 {
            return Err(rad);
        }
        let u = rad.sqrt();
        buf.u[slot] = u;
        buf.inv[slot] = 1.0 / u;
    }
    Ok(())
}

struct NormalEquations {
    objective: f64,
    /// J^T r with J the model Jacobian and r the residuals (measured - model).
    gradient: [f64; 3],
    /// J^T J, symmetric.
    hessian: [[f64; 3]; 3],
}

/// One pass over all 2Q residuals, accumulating the objective and the
/// Gauss-Newton normal equations.
fn accumulate(e: &AbcEstimate, sums: &PhaseSumSet) -> std::result::Result<NormalEquations, f64> {
    let cfg = sums.config();
    let nn = cfg.half_size();
    let side = cfg.side();
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength();
    let db_scale = k * cfg.spacing();
    let mut buf = LineBuffers {
        u: vec![0.0; side],
        inv: vec![0.0; side],
    };
    let mut out = NormalEquations {
        objective: 0.0,
        gradient: [0.0; 3],
        hessian: [[0.0; 3]; 3],
    };
    for horizontal in [true, false] {
        for fixed in -nn..=nn {
            fill_line(e, cfg, horizontal, fixed, &mut buf)?;
            let f = fixed as f64;
            for lo in 0..side {
                let lo_idx = lo as i64 - nn;
                let prefix_lo = if horizontal {
                    sums.h_prefix_at(lo_idx, fixed)
                } else {
                    sums.v_prefix_at(fixed, lo_idx)
                };
                for hi in (lo + 1)..side {
                    let hi_idx = hi as i64 - nn;
                    let measured = if horizontal {
                        sums.h_prefix_at(hi_idx, fixed) - prefix_lo
                    } else {
                        sums.v_prefix_at(fixed, hi_idx) - prefix_lo
                    };
                    let model = -k * (buf.u[hi] - buf.u[lo]);
                    let residual = measured - model;
                    out.objective += residual * residual;
                    let delta_inv = buf.inv[hi] - buf.inv[lo];
                    let weighted =
                        hi_idx as f64 * buf.inv[hi] - lo_idx as f64 * buf.inv[lo];
                    let da = -(0.5 * k) * delta_inv;
                    let (db, dc) = if horizontal {
                        (db_scale * weighted, db_scale * f * delta_inv)
                    } else {
                        (db_scale * f * delta_inv, db_scale * weighted)
                    };
                    let grad = [da, db, dc];
                    for i in 0..3 {
                        out.gradient[i] += grad[i] * residual;
                        for j in i..3 {
                            out.hessian[i][j] += grad[i] * grad[j];
                        }
                    }
                }
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            out.hessian[i][j] = out.hessian[j][i];
        }
    }
    Ok(out)
}

/// Sum of squared residuals between measured and modeled sums over all
/// baselines on both axes (2Q terms).
pub fn ls_objective(e: &AbcEstimate, sums: &PhaseSumSet) -> Result<f64> {
    if !e.is_feasible() {
        return Err(Error::InfeasibleParameters(
            e.a - e.b * e.b - e.c * e.c,
        ));
    }
    let cfg = sums.config();
    let nn = cfg.half_size();
    let side = cfg.side();
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength();
    let mut buf = LineBuffers {
        u: vec![0.0; side],
        inv: vec![0.0; side],
    };
    let mut objective = 0.0;
    for horizontal in [true, false] {
        for fixed in -nn..=nn {
            // Feasible estimates keep every radicand non-negative; a zero
            // radicand (user exactly on an element) still evaluates here.
            fill_line_allow_zero(e, cfg, horizontal, fixed, &mut buf)?;
            for lo in 0..side {
                let lo_idx = lo as i64 - nn;
                let prefix_lo = if horizontal {
                    sums.h_prefix_at(lo_idx, fixed)
                } else {
                    sums.v_prefix_at(fixed, lo_idx)
                };
                for hi in (lo + 1)..side {
                    let hi_idx = hi as i64 - nn;
                    let measured = if horizontal {
                        sums.h_prefix_at(hi_idx, fixed) - prefix_lo
                    } else {
                        sums.v_prefix_at(fixed, hi_idx) - prefix_lo
                    };
                    let residual = measured - (-k * (buf.u[hi] - buf.u[lo]));
                    objective += residual * residual;
                }
            }
        }
    }
    Ok(objective)
}

fn fill_line_allow_zero(
    e: &AbcEstimate,
    cfg: &UpaConfig,
    horizontal: bool,
    fixed: i64,
    buf: &mut LineBuffers,
) -> Result<()> {
    let nn = cfg.half_size();
    let d = cfg.spacing();
    let f = fixed as f64;
    for (slot, varying) in (-nn..=nn).enumerate() {
        let i = varying as f64;
        let rad = if horizontal {
            e.a + d * d * (i * i + f * f) - 2.0 * e.b * i * d - 2.0 * e.c * f * d
        } else {
            e.a + d * d * (f * f + i * i) - 2.0 * e.b * f * d - 2.0 * e.c * i * d
        };
        if rad < 0.0 {
            return Err(Error::InfeasibleParameters(rad));
        }
        buf.u[slot] = rad.sqrt();
        buf.inv[slot] = 0.0;
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting; None when the system is singular.
fn solve_3x3(mut h: [[f64; 3]; 3], mut g: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs()))
            .unwrap();
        if h[pivot_row][col].abs() < f64::MIN_POSITIVE {
            return None;
        }
        h.swap(col, pivot_row);
        g.swap(col, pivot_row);
        for row in (col + 1)..3 {
            let factor = h[row][col] / h[col][col];
            for k in col..3 {
                h[row][k] -= factor * h[col][k];
            }
            g[row] -= factor * g[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = g[row];
        for k in (row + 1)..3 {
            acc -= h[row][k] * x[k];
        }
        x[row] = acc / h[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

fn feasible_step(p: &AbcEstimate, delta: &[f64; 3]) -> Option<AbcEstimate> {
    let next = AbcEstimate::new(p.a + delta[0], p.b + delta[1], p.c + delta[2]);
    next.is_feasible().then_some(next)
}

const MAX_DAMPING_ATTEMPTS: u32 = 50;

/// Levenberg-Marquardt over (A, B, C) with multiplicative diagonal damping.
/// Steps leaving the feasible region (A > 0, A >= B^2 + C^2) or producing a
/// non-positive radicand are rejected and the damping increased.
pub fn least_squares_estimate(
    sums: &PhaseSumSet,
    init: &AbcEstimate,
    settings: &LsSettings,
) -> Result<EstimateReport> {
    settings.validate()?;
    if !(init.a > 0.0) {
        return Err(Error::InfeasibleStart(init.a));
    }
    let mut p = project_feasible(*init);
    let mut state = match accumulate(&p, sums) {
        Ok(s) => s,
        Err(rad) => return Err(Error::InfeasibleStart(rad)),
    };
    let mut mu = settings.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    'outer: while iterations < settings.max_iterations && !converged {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..MAX_DAMPING_ATTEMPTS {
            let mut damped = state.hessian;
            for i in 0..3 {
                damped[i][i] += mu * state.hessian[i][i];
            }
            let Some(delta) = solve_3x3(damped, state.gradient) else {
                mu *= settings.damping_up;
                continue;
            };
            let step_norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
            let p_norm = (p.a * p.a + p.b * p.b + p.c * p.c).sqrt();
            let small = step_norm <= settings.step_tolerance * (p_norm + settings.step_tolerance);
            let candidate = feasible_step(&p, &delta).and_then(|next| {
                accumulate(&next, sums).ok().map(|s| (next, s))
            });
            if let Some((next, next_state)) = candidate {
                if next_state.objective < state.objective {
                    p = next;
                    state = next_state;
                    mu *= settings.damping_down;
                    accepted = true;
                    if small {
                        converged = true;
                    }
                    break;
                }
            }
            if small {
                // The solver cannot move by more than the tolerance; stop here.
                converged = true;
                break;
            }
            mu *= settings.damping_up;
        }
        if !accepted && !converged {
            // Damping exhausted without progress.
            break 'outer;
        }
    }
    if converged {
        // One undamped polish step to quadratic stationarity. The damped loop
        // stops wherever its last accepted step landed, which wobbles at the
        // objective's rounding floor; the Newton map contracts that wobble,
        // making the estimate reproducible under ulp-level input changes.
        if let Some(delta) = solve_3x3(state.hessian, state.gradient) {
            if let Some(polished) = feasible_step(&p, &delta) {
                if let Ok(polished_state) = accumulate(&polished, sums) {
                    p = polished;
                    state = polished_state;
                }
            }
        }
    }
    Ok(build_report(
        p,
        EstimateFlags {
            ls_converged: converged,
            ..EstimateFlags::default()
        },
        iterations,
        state.objective,
    ))
}

fn build_report(
    abc: AbcEstimate,
    mut flags: EstimateFlags,
    iterations: u32,
    final_objective: f64,
) -> EstimateReport {
    // A > 0 holds for every path that reaches here.
    let spherical = spherical_from_abc(&abc).expect("positive A");
    let cartesian = cartesian_from_abc(&abc).expect("positive A");
    flags.clamped_arccos = spherical.clamped_arccos;
    flags.azimuth_degenerate = spherical.azimuth_degenerate;
    flags.clamped_y = cartesian.clamped_y;
    EstimateReport {
        abc,
        spherical: spherical.position,
        cartesian: cartesian.position,
        flags,
        iterations,
        final_objective,
    }
}

/// Full chain: diffs, prefix sums, closed form (kept verbatim), then least
/// squares initialized from the closed form or the fallback.
pub fn estimate_pipeline_full(
    field: &PilotField,
    cfg: &UpaConfig,
    settings: &LsSettings,
) -> Result<PipelineReport> {
    let diffs = adjacent_phase_diffs(field)?;
    let sums = build_phase_sums(&diffs, cfg)?;
    let cs = extract_center_sums(&sums)?;
    let closed_form = closed_form_estimate(&cs, cfg);
    let (init, near_degenerate, fell_back) = match &closed_form {
        Ok(e) => (*e, false, false),
        Err(err) => (
            fallback_init(&cs, cfg),
            matches!(err, Error::RangeUnidentifiable { .. }),
            true,
        ),
    };
    let mut report = least_squares_estimate(&sums, &init, settings)?;
    report.flags.near_degenerate_denominator = near_degenerate;
    report.flags.used_fallback_init = fell_back;
    Ok(PipelineReport {
        closed_form,
        least_squares: report,
    })
}

/// Least-squares leg of the full pipeline.
pub fn estimate_pipeline(
    field: &PilotField,
    cfg: &UpaConfig,
    settings: &LsSettings,
) -> Result<EstimateReport> {
    Ok(estimate_pipeline_full(field, cfg, settings)?.least_squares)
}

/// Spherical recovery for a closed-form result (A is positive by construction).
pub fn closed_form_report(abc: &AbcEstimate) -> EstimateReport {
    build_report(*abc, EstimateFlags::default(), 0, f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_pilot_field, ChannelGains, RadioConfig};
    use crate::geometry::{abc_from_spherical, exact_distance, SphericalPosition};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cfg(n: i64) -> UpaConfig {
        UpaConfig::new(n, 0.005, 0.01).unwrap()
    }

    fn assert_rel(actual: f64, expected: f64, tol: f64) {
        let scale = expected.abs().max(1e-300);
        assert!(
            (actual - expected).abs() / scale <= tol,
            "actual {actual} expected {expected} rel tol {tol}"
        );
    }

    fn noiseless_sums(p: &SphericalPosition, c: &UpaConfig) -> PhaseSumSet {
        let radio = RadioConfig::new(0.2, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field =
            simulate_pilot_field(p, c, &ChannelGains::isotropic(c.wavelength()), &radio, &mut rng)
                .unwrap();
        build_phase_sums(&adjacent_phase_diffs(&field).unwrap(), c).unwrap()
    }

    fn noisy_sums(p: &SphericalPosition, c: &UpaConfig, noise: f64, seed: u64) -> PhaseSumSet {
        let radio = RadioConfig::new(0.2, noise, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field =
            simulate_pilot_field(p, c, &ChannelGains::isotropic(c.wavelength()), &radio, &mut rng)
                .unwrap();
        build_phase_sums(&adjacent_phase_diffs(&field).unwrap(), c).unwrap()
    }

    #[test]
    fn center_sums_boresight() {
        let c = cfg(10);
        let r = 5.0;
        let p = SphericalPosition::new(r, FRAC_PI_2, FRAC_PI_2).unwrap();
        let cs = extract_center_sums(&noiseless_sums(&p, &c)).unwrap();
        let dn = c.spacing() * 10.0;
        let expected = r - (r * r + dn * dn).sqrt();
        assert_rel(cs.delta_v1, expected, 1e-9);
        assert_rel(cs.delta_v2, -expected, 1e-9);
        assert!(cs.delta_h.abs() <= 1e-12);
    }

    #[test]
    fn center_sums_match_distance_oracle() {
        let c = cfg(10);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let cs = extract_center_sums(&noiseless_sums(&p, &c)).unwrap();
        let rho = |n, m| exact_distance(&p, n, m, &c).unwrap();
        assert_rel(cs.delta_v1, rho(0, 0) - rho(0, 10), 1e-9);
        assert_rel(cs.delta_v2, rho(0, -10) - rho(0, 0), 1e-9);
        assert_rel(cs.delta_h, rho(-10, 0) - rho(10, 0), 1e-9);
    }

    #[test]
    fn center_sums_of_constant_field_vanish() {
        let c = cfg(2);
        let field = PilotField::from_values(2, vec![Complex64::new(1.0, 0.0); 25]).unwrap();
        let sums = build_phase_sums(&adjacent_phase_diffs(&field).unwrap(), &c).unwrap();
        let cs = extract_center_sums(&sums).unwrap();
        assert_eq!((cs.delta_v1, cs.delta_v2, cs.delta_h), (0.0, 0.0, 0.0));
    }

    #[test]
    fn center_sums_need_aperture() {
        let c = cfg(0);
        let field = PilotField::from_values(0, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let sums = build_phase_sums(&adjacent_phase_diffs(&field).unwrap(), &c).unwrap();
        assert!(matches!(
            extract_center_sums(&sums),
            Err(Error::InsufficientAperture)
        ));
    }

    #[test]
    fn closed_form_boresight_identity() {
        let c = cfg(10);
        let r = 7.0;
        let dn = c.spacing() * 10.0;
        let v = r - (r * r + dn * dn).sqrt();
        let cs = CenterLineSums {
            delta_v1: v,
            delta_v2: -v,
            delta_h: 0.0,
        };
        // Constructing delta_v from r rounds once; the inversion amplifies
        // that rounding by roughly (d N / delta_v)^2, so expect ~1e-11 here.
        let e = closed_form_estimate(&cs, &c).unwrap();
        assert_rel(e.a, r * r, 1e-10);
        assert!(e.b.abs() <= 1e-12 && e.c.abs() <= 1e-10);
    }

    #[test]
    fn closed_form_recovers_noiseless_user() {
        let c = cfg(10);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let cs = extract_center_sums(&noiseless_sums(&p, &c)).unwrap();
        let e = closed_form_estimate(&cs, &c).unwrap();
        assert_rel(e.a, 25.0, 1e-9);
        assert_rel(e.b, 3.0618621784789726, 1e-9);
        assert_rel(e.c, 3.5355339059327378, 1e-9);
    }

    #[test]
    fn closed_form_error_paths() {
        let c = cfg(10);
        // Equal vertical sums: far-field degeneracy.
        let cs = CenterLineSums {
            delta_v1: 0.01,
            delta_v2: 0.01,
            delta_h: 0.0,
        };
        assert!(matches!(
            closed_form_estimate(&cs, &c),
            Err(Error::RangeUnidentifiable { .. })
        ));

        // Sign-flipped vertical sums: negative recovered range.
        let cs = CenterLineSums {
            delta_v1: 0.045,
            delta_v2: 0.04,
            delta_h: 0.0,
        };
        assert!(matches!(
            closed_form_estimate(&cs, &c),
            Err(Error::InconsistentMeasurement(_))
        ));

        // Horizontal sum too large for the recovered range.
        let cs = CenterLineSums {
            delta_v1: -0.03,
            delta_v2: 0.03,
            delta_h: 0.2,
        };
        assert!(matches!(
            closed_form_estimate(&cs, &c),
            Err(Error::InfeasibleMeasurement(_))
        ));
    }

    #[test]
    fn objective_zero_at_truth() {
        let c = cfg(4);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let sums = noiseless_sums(&p, &c);
        let truth = abc_from_spherical(&p);
        assert!(ls_objective(&truth, &sums).unwrap() <= 1e-18);
    }

    #[test]
    fn objective_nonnegative_and_locally_minimal() {
        let c = cfg(4);
        let p = SphericalPosition::new(3.0, 1.0, 0.9).unwrap();
        let sums = noiseless_sums(&p, &c);
        let truth = abc_from_spherical(&p);
        let base = ls_objective(&truth, &sums).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..50 {
            let perturbed = AbcEstimate::new(
                truth.a * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)),
                truth.b * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)),
                truth.c * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)),
            );
            let obj = ls_objective(&perturbed, &sums).unwrap();
            assert!(obj >= 0.0 && obj >= base);
        }
    }

    #[test]
    fn objective_rejects_infeasible() {
        let c = cfg(4);
        let p = SphericalPosition::new(3.0, 1.0, 0.9).unwrap();
        let sums = noiseless_sums(&p, &c);
        assert!(matches!(
            ls_objective(&AbcEstimate::new(9.0, 3.0, 3.0), &sums),
            Err(Error::InfeasibleParameters(_))
        ));
    }

    #[test]
    fn ls_from_truth_converges_immediately() {
        let c = cfg(6);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let sums = noiseless_sums(&p, &c);
        let truth = abc_from_spherical(&p);
        let report = least_squares_estimate(&sums, &truth, &LsSettings::default()).unwrap();
        assert!(report.flags.ls_converged);
        assert!(report.iterations <= 2, "iterations {}", report.iterations);
        assert!(report.final_objective <= 1e-18);
    }

    #[test]
    fn ls_recovers_from_perturbed_init() {
        let c = cfg(6);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let sums = noiseless_sums(&p, &c);
        let truth = abc_from_spherical(&p);
        let init = AbcEstimate::new(truth.a * 1.1, truth.b * 0.9, truth.c * 1.1);
        let report = least_squares_estimate(&sums, &init, &LsSettings::default()).unwrap();
        assert!(report.flags.ls_converged);
        assert_rel(report.abc.a, truth.a, 1e-6);
        assert_rel(report.abc.b, truth.b, 1e-6);
        assert_rel(report.abc.c, truth.c, 1e-6);
        assert_rel(report.spherical.r, 5.0, 1e-6);
    }

    #[test]
    fn ls_never_increases_objective() {
        let c = cfg(5);
        let p = SphericalPosition::new(5.0, 1.2, 0.8).unwrap();
        let sums = noisy_sums(&p, &c, 1e-13, 11);
        let truth = abc_from_spherical(&p);
        for scale in [0.8, 0.95, 1.05, 1.3] {
            let init = AbcEstimate::new(truth.a * scale, truth.b * scale, truth.c * scale);
            let initial = ls_objective(&project_feasible(init), &sums).unwrap();
            let report = least_squares_estimate(&sums, &init, &LsSettings::default()).unwrap();
            assert!(
                report.final_objective <= initial,
                "{} > {initial}",
                report.final_objective
            );
        }
    }

    #[test]
    fn ls_projects_infeasible_init() {
        let c = cfg(6);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let sums = noiseless_sums(&p, &c);
        let init = AbcEstimate::new(25.0, 4.0, 4.0);
        assert!(!init.is_feasible());
        let report = least_squares_estimate(&sums, &init, &LsSettings::default()).unwrap();
        assert!(report.flags.ls_converged);
        assert_rel(report.spherical.r, 5.0, 1e-6);
    }

    #[test]
    fn ls_rejects_nonpositive_a() {
        let c = cfg(4);
        let p = SphericalPosition::new(3.0, 1.0, 1.0).unwrap();
        let sums = noiseless_sums(&p, &c);
        assert!(matches!(
            least_squares_estimate(&sums, &AbcEstimate::new(-1.0, 0.0, 0.0), &LsSettings::default()),
            Err(Error::InfeasibleStart(_))
        ));
    }

    #[test]
    fn pipeline_noiseless_matches_truth() {
        let c = cfg(10);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let radio = RadioConfig::new(0.2, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field =
            simulate_pilot_field(&p, &c, &ChannelGains::isotropic(0.01), &radio, &mut rng).unwrap();
        let report = estimate_pipeline(&field, &c, &LsSettings::default()).unwrap();
        assert!(!report.flags.used_fallback_init);
        assert_rel(report.spherical.r, 5.0, 1e-8);
        assert_rel(report.spherical.theta, PI / 6.0, 1e-8);
        assert_rel(report.spherical.phi, PI / 4.0, 1e-8);
        assert_rel(report.cartesian.y, 1.7677669529663689, 1e-8);
    }

    #[test]
    fn pipeline_invariant_under_global_scaling() {
        let c = cfg(6);
        let p = SphericalPosition::new(5.0, 1.0, 0.9).unwrap();
        let radio = RadioConfig::new(0.2, 1e-12, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let field =
            simulate_pilot_field(&p, &c, &ChannelGains::isotropic(0.01), &radio, &mut rng).unwrap();
        let scaled = field.scaled(Complex64::from_polar(1000.0, 2.1));
        let a = estimate_pipeline(&field, &c, &LsSettings::default()).unwrap();
        let b = estimate_pipeline(&scaled, &c, &LsSettings::default()).unwrap();
        assert_rel(b.abc.a, a.abc.a, 1e-12);
        assert_rel(b.abc.b, a.abc.b, 1e-12);
        assert_rel(b.abc.c, a.abc.c, 1e-12);
    }

    #[test]
    fn pipeline_boresight_keeps_y_unclamped() {
        let c = cfg(8);
        let r = 4.0;
        let p = SphericalPosition::new(r, FRAC_PI_2, FRAC_PI_2).unwrap();
        let radio = RadioConfig::new(0.2, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field =
            simulate_pilot_field(&p, &c, &ChannelGains::isotropic(0.01), &radio, &mut rng).unwrap();
        let report = estimate_pipeline(&field, &c, &LsSettings::default()).unwrap();
        assert!(!report.flags.clamped_y);
        assert_rel(report.cartesian.y, r, 1e-8);
    }

    #[test]
    fn pipeline_falls_back_on_degenerate_field() {
        let c = cfg(3);
        // Constant field: all diffs zero, closed-form denominator zero.
        let field = PilotField::from_values(3, vec![Complex64::new(2.0, 1.0); 49]).unwrap();
        let full = estimate_pipeline_full(&field, &c, &LsSettings::default()).unwrap();
        assert!(matches!(
            full.closed_form,
            Err(Error::RangeUnidentifiable { .. })
        ));
        let flags = full.least_squares.flags;
        assert!(flags.used_fallback_init);
        assert!(flags.near_degenerate_denominator);
        // All-zero sums have no finite minimizer; the solver still returns a
        // feasible point without erroring.
        assert!(full.least_squares.abc.is_feasible());
    }

    #[test]
    fn fallback_init_slopes() {
        let c = cfg(10);
        let p = SphericalPosition::new(5.0, PI / 6.0, PI / 4.0).unwrap();
        let cs = extract_center_sums(&noiseless_sums(&p, &c)).unwrap();
        let init = fallback_init(&cs, &c);
        let r0 = 10.0 * 2.0 * c.spacing() * 10.0;
        assert_rel(init.a, r0 * r0, 1e-12);
        // Far-field slopes recover the direction cosines times the presumed range.
        let truth = abc_from_spherical(&p);
        assert_rel(init.b / r0, truth.b / 5.0, 0.05);
        assert_rel(init.c / r0, truth.c / 5.0, 0.05);
        assert!(init.is_feasible());
    }
}
