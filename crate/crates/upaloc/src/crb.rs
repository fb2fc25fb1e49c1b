//! Fisher information and Cramér-Rao bounds for (r, theta, phi) under the
//! exact spherical-wave observation model.
//!
//! The bound treats the common complex factor of the received field (transmit
//! amplitude and phase reference) as an unknown nuisance alongside the three
//! coordinates, and reports the information that remains after projecting that
//! factor out. Estimators built on phase differences never see the absolute
//! phase reference, so this is the bound their error can actually approach;
//! keeping the common factor as known instead would claim wavelength-scale
//! range precision from the absolute carrier phase.

use num_complex::Complex64;

use crate::channel::{channel_coefficient, ChannelGains, RadioConfig};
use crate::error::{Error, Result};
use crate::geometry::{exact_distance, SphericalPosition, UpaConfig};

/// 3x3 Fisher information matrix over (r, theta, phi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrix {
    pub entries: [[f64; 3]; 3],
}

/// Diagonal of the inverse Fisher matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbResult {
    pub var_r: f64,
    pub var_theta: f64,
    pub var_phi: f64,
    pub sqrt_crb_r: f64,
}

impl CrbResult {
    pub fn sqrt_crb_theta(&self) -> f64 {
        self.var_theta.sqrt()
    }

    pub fn sqrt_crb_phi(&self) -> f64 {
        self.var_phi.sqrt()
    }
}

/// Analytic derivatives of every channel coefficient with respect to
/// (r, theta, phi), row-major with the horizontal index slowest, matching the
/// pilot-field layout. Antenna gains are treated as locally constant.
pub fn channel_jacobian(
    p: &SphericalPosition,
    cfg: &UpaConfig,
    gains: &ChannelGains,
) -> Result<Vec<[Complex64; 3]>> {
    Ok(channel_and_jacobian(p, cfg, gains)?.1)
}

/// Coefficients and their derivatives in one pass; h is needed alongside J
/// for the nuisance projection.
pub(crate) fn channel_and_jacobian(
    p: &SphericalPosition,
    cfg: &UpaConfig,
    gains: &ChannelGains,
) -> Result<(Vec<Complex64>, Vec<[Complex64; 3]>)> {
    p.validate()?;
    let nn = cfg.half_size();
    let side = cfg.side();
    let d = cfg.spacing();
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength();
    let (sin_theta, cos_theta) = p.theta.sin_cos();
    let (sin_phi, cos_phi) = p.phi.sin_cos();
    let mut coeffs = Vec::with_capacity(side * side);
    let mut jac = Vec::with_capacity(side * side);
    for n in -nn..=nn {
        for m in -nn..=nn {
            let rho = exact_distance(p, n, m, cfg)?;
            if rho == 0.0 {
                return Err(Error::ZeroDistance { n, m });
            }
            let h = channel_coefficient(p, n, m, cfg, gains)?;
            // d rho / d psi via the chain rule through the squared distance.
            let dn = d * n as f64;
            let dm = d * m as f64;
            let drho_dr = (p.r - dn * sin_phi * cos_theta - dm * cos_phi) / rho;
            let drho_dtheta = dn * p.r * sin_phi * sin_theta / rho;
            let drho_dphi = (dm * p.r * sin_phi - dn * p.r * cos_phi * cos_theta) / rho;
            // dh/drho = -h (1/rho + jk): amplitude decay plus phase rotation.
            let dh_drho = -h * Complex64::new(1.0 / rho, k);
            coeffs.push(h);
            jac.push([dh_drho * drho_dr, dh_drho * drho_dtheta, dh_drho * drho_dphi]);
        }
    }
    Ok((coeffs, jac))
}

/// Fisher matrix from precomputed coefficients and derivatives:
/// (2KP/sigma^2) Re{J^H (I - h h^H / |h|^2) J}.
///
/// Each Jacobian column is projected against h per element before the Gram
/// accumulation. Subtracting after the Gram instead would cancel ten-plus
/// digits in the range block, where the derivative is dominated by its
/// component along h.
pub(crate) fn fisher_from_components(
    coeffs: &[Complex64],
    jac: &[[Complex64; 3]],
    radio: &RadioConfig,
) -> Result<FisherMatrix> {
    if radio.noise_power() == 0.0 {
        return Err(Error::UnboundedInformation);
    }
    let scale = 2.0 * radio.pilot_count() as f64 * radio.transmit_power() / radio.noise_power();
    let mut coupling = [Complex64::ZERO; 3];
    let mut norm_sq = 0.0;
    for (h, row) in coeffs.iter().zip(jac) {
        norm_sq += h.norm_sqr();
        for i in 0..3 {
            coupling[i] += h.conj() * row[i];
        }
    }
    for c in &mut coupling {
        *c /= norm_sq;
    }
    let mut gram = [[0.0; 3]; 3];
    for (h, row) in coeffs.iter().zip(jac) {
        let projected = [
            row[0] - h * coupling[0],
            row[1] - h * coupling[1],
            row[2] - h * coupling[2],
        ];
        for i in 0..3 {
            for j in i..3 {
                gram[i][j] += (projected[i].conj() * projected[j]).re;
            }
        }
    }
    let mut entries = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            entries[i][j] = scale * gram[i][j];
            entries[j][i] = entries[i][j];
        }
    }
    Ok(FisherMatrix { entries })
}

/// Fisher information for a user position under the given array, gains, and
/// radio parameters. Zero noise power carries unbounded information.
pub fn fisher_information(
    p: &SphericalPosition,
    cfg: &UpaConfig,
    gains: &ChannelGains,
    radio: &RadioConfig,
) -> Result<FisherMatrix> {
    let (coeffs, jac) = channel_and_jacobian(p, cfg, gains)?;
    fisher_from_components(&coeffs, &jac, radio)
}

/// Lower-triangular Cholesky factor; None when a pivot is not strictly
/// positive (matrix not positive definite to working precision).
fn cholesky3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut acc = m[i][j];
            for k in 0..j {
                acc -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(acc > 0.0) || !acc.is_finite() {
                    return None;
                }
                l[i][j] = acc.sqrt();
            } else {
                l[i][j] = acc / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive definite 3x3 matrix via its Cholesky
/// factor; None when the factorization fails.
#[cfg(test)]
fn invert_spd_3x3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let l = cholesky3(m)?;
    let mut inv = [[0.0; 3]; 3];
    for col in 0..3 {
        // Forward then back substitution on the unit vector e_col.
        let mut y = [0.0; 3];
        for i in 0..3 {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                acc -= l[i][k] * y[k];
            }
            y[i] = acc / l[i][i];
        }
        for i in (0..3).rev() {
            let mut acc = y[i];
            for k in (i + 1)..3 {
                acc -= l[k][i] * inv[k][col];
            }
            inv[i][col] = acc / l[i][i];
        }
    }
    Some(inv)
}

/// Relative spread of the Cholesky pivots beyond which the inverse is
/// numerically meaningless in double precision.
const CONDITION_LIMIT: f64 = 1e14;

/// Diagonal of the inverse Fisher matrix: the variance lower bounds for
/// unbiased estimates of r, theta, and phi.
pub fn crb_diag(
    p: &SphericalPosition,
    cfg: &UpaConfig,
    gains: &ChannelGains,
    radio: &RadioConfig,
) -> Result<CrbResult> {
    let fim = fisher_information(p, cfg, gains, radio)?;
    let l = cholesky3(&fim.entries).ok_or(Error::DegenerateGeometry)?;
    let pivots = [l[0][0], l[1][1], l[2][2]];
    let max_pivot = pivots.iter().fold(0.0_f64, |a, &b| a.max(b));
    let min_pivot = pivots.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if (max_pivot / min_pivot).powi(2) > CONDITION_LIMIT {
        return Err(Error::DegenerateGeometry);
    }
    // diag(F^-1)_i = |L^-1 e_i|^2, a sum of squares, hence never negative.
    let mut var = [0.0; 3];
    for col in 0..3 {
        let mut y = [0.0; 3];
        for i in col..3 {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                acc -= l[i][k] * y[k];
            }
            y[i] = acc / l[i][i];
        }
        var[col] = y.iter().map(|v| v * v).sum();
    }
    Ok(CrbResult {
        var_r: var[0],
        var_theta: var[1],
        var_phi: var[2],
        sqrt_crb_r: var[0].sqrt(),
    })
}
