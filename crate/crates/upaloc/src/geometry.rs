//! Array geometry, coordinate transforms, and exact user-element distances.
//!
//! The array is a (2N+1)x(2N+1) uniform planar grid in the y = 0 plane with
//! spacing `d` along x and z; element (n, m) sits at [n d, 0, m d]. The user
//! lives in the half-space y >= 0 and is described either by spherical
//! coordinates (r, theta, phi) or by the transformed triplet
//! (A, B, C) = (r^2, r sin(phi) cos(theta), r cos(phi)) that linearizes the
//! squared-distance expressions.

use crate::error::{Error, Result};

/// Uniform planar array geometry: half-size N, element spacing, carrier wavelength.
///
/// Lengths are in meters. Spacing at or below half a wavelength guarantees
/// wrap-free adjacent phase-differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpaConfig {
    half_size: i64,
    spacing: f64,
    wavelength: f64,
}

impl UpaConfig {
    /// Validates N >= 0, spacing > 0, wavelength > 0.
    pub fn new(half_size: i64, spacing: f64, wavelength: f64) -> Result<Self> {
        if half_size < 0 {
            return Err(Error::InvalidConfig(format!(
                "half_size {half_size} must be non-negative"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "spacing {spacing} must be positive and finite"
            )));
        }
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "wavelength {wavelength} must be positive and finite"
            )));
        }
        Ok(Self {
            half_size,
            spacing,
            wavelength,
        })
    }

    pub fn half_size(&self) -> i64 {
        self.half_size
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Elements per side, 2N+1.
    pub fn side(&self) -> usize {
        (2 * self.half_size + 1) as usize
    }

    /// True iff spacing <= wavelength/2, so adjacent diffs cannot wrap noiselessly.
    pub fn is_wrap_free(&self) -> bool {
        self.spacing <= self.wavelength / 2.0
    }

    pub(crate) fn check_index(&self, n: i64, m: i64) -> Result<()> {
        let nn = self.half_size;
        if n < -nn || n > nn || m < -nn || m > nn {
            return Err(Error::IndexOutOfRange {
                n,
                m,
                half_size: nn,
            });
        }
        Ok(())
    }
}

/// User position in spherical coordinates: range r (m), azimuth theta (rad),
/// zenith phi (rad). Both angles lie in [0, pi] under the half-space assumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPosition {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalPosition {
    pub fn new(r: f64, theta: f64, phi: f64) -> Result<Self> {
        let p = Self { r, theta, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "range {} must be positive and finite",
                self.r
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!(
                "azimuth {} outside [0, pi]",
                self.theta
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.phi) {
            return Err(Error::InvalidConfig(format!(
                "zenith {} outside [0, pi]",
                self.phi
            )));
        }
        Ok(())
    }
}

/// Position in Cartesian coordinates (meters); y >= 0 for valid users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Transformed unknowns (A, B, C) = (r^2, r sin(phi) cos(theta), r cos(phi)).
///
/// Units: A in m^2, B and C in m. Feasibility requires A > 0 and A >= B^2 + C^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcEstimate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AbcEstimate {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn is_feasible(&self) -> bool {
        self.a > 0.0 && self.a >= self.b * self.b + self.c * self.c
    }
}

/// Spherical coordinates recovered from (A, B, C), with boundary diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalRecovery {
    pub position: SphericalPosition,
    /// An arccos argument fell outside [-1, 1] and was clamped.
    pub clamped_arccos: bool,
    /// A - C^2 <= 0: the user sits on the z-axis and azimuth is unidentifiable.
    pub azimuth_degenerate: bool,
}

/// Cartesian coordinates recovered from (A, B, C), with boundary diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianRecovery {
    pub position: CartesianPosition,
    /// A - B^2 - C^2 < 0: the y-coordinate radicand was clamped to zero.
    pub clamped_y: bool,
}

/// Position of element (n, m): [n d, 0, m d].
pub fn antenna_position(n: i64, m: i64, cfg: &UpaConfig) -> Result<CartesianPosition> {
    cfg.check_index(n, m)?;
    Ok(CartesianPosition {
        x: n as f64 * cfg.spacing(),
        y: 0.0,
        z: m as f64 * cfg.spacing(),
    })
}

/// [r sin(phi) cos(theta), r sin(phi) sin(theta), r cos(phi)].
pub fn spherical_to_cartesian(p: &SphericalPosition) -> CartesianPosition {
    let (sin_phi, cos_phi) = p.phi.sin_cos();
    let (sin_theta, cos_theta) = p.theta.sin_cos();
    CartesianPosition {
        x: p.r * sin_phi * cos_theta,
        y: p.r * sin_phi * sin_theta,
        z: p.r * cos_phi,
    }
}

/// Exact distance from the user to element (n, m):
/// sqrt(r^2 + d^2 (n^2 + m^2) - 2 d n r sin(phi) cos(theta) - 2 d m r cos(phi)).
pub fn exact_distance(p: &SphericalPosition, n: i64, m: i64, cfg: &UpaConfig) -> Result<f64> {
    cfg.check_index(n, m)?;
    let d = cfg.spacing();
    let nf = n as f64;
    let mf = m as f64;
    let radicand = p.r * p.r + d * d * (nf * nf + mf * mf)
        - 2.0 * d * nf * p.r * p.phi.sin() * p.theta.cos()
        - 2.0 * d * mf * p.r * p.phi.cos();
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand(radicand));
    }
    Ok(radicand.sqrt())
}

/// (r^2, r sin(phi) cos(theta), r cos(phi)).
pub fn abc_from_spherical(p: &SphericalPosition) -> AbcEstimate {
    AbcEstimate {
        a: p.r * p.r,
        b: p.r * p.phi.sin() * p.theta.cos(),
        c: p.r * p.phi.cos(),
    }
}

fn clamped_acos(x: f64, clamped: &mut bool) -> f64 {
    if x > 1.0 {
        *clamped = true;
        0.0
    } else if x < -1.0 {
        *clamped = true;
        std::f64::consts::PI
    } else {
        x.acos()
    }
}

/// Recovers (r, theta, phi) = (sqrt(A), arccos(B / sqrt(A - C^2)), arccos(C / sqrt(A))).
///
/// Arccos arguments are clamped to [-1, 1]; if A - C^2 <= 0 the azimuth is
/// reported as 0 with `azimuth_degenerate` set instead of erroring.
pub fn spherical_from_abc(e: &AbcEstimate) -> Result<SphericalRecovery> {
    if !(e.a > 0.0) {
        return Err(Error::NonPositiveRange(e.a));
    }
    let r = e.a.sqrt();
    let mut clamped = false;
    let phi = clamped_acos(e.c / r, &mut clamped);
    let horiz_sq = e.a - e.c * e.c;
    let (theta, azimuth_degenerate) = if horiz_sq <= 0.0 {
        (0.0, true)
    } else {
        (clamped_acos(e.b / horiz_sq.sqrt(), &mut clamped), false)
    };
    Ok(SphericalRecovery {
        position: SphericalPosition { r, theta, phi },
        clamped_arccos: clamped,
        azimuth_degenerate,
    })
}

/// Recovers [x, y, z] = [B, sqrt(max(A - B^2 - C^2, 0)), C].
pub fn cartesian_from_abc(e: &AbcEstimate) -> Result<CartesianRecovery> {
    if !(e.a > 0.0) {
        return Err(Error::NonPositiveRange(e.a));
    }
    let y_sq = e.a - e.b * e.b - e.c * e.c;
    let clamped_y = y_sq < 0.0;
    Ok(CartesianRecovery {
        position: CartesianPosition {
            x: e.b,
            y: y_sq.max(0.0).sqrt(),
            z: e.c,
        },
        clamped_y,
    })
}
