//! Spherical-wave channel synthesis and pilot-block observation simulation.
//!
//! Each element (n, m) sees h_{n,m} = sqrt(G1 G2) / (4 pi rho) * exp(-j 2 pi rho / lambda)
//! with rho the exact user-element distance. Averaging K unit pilots gives
//! y_{n,m} = sqrt(P) h_{n,m} + w_{n,m} with w circularly symmetric complex
//! Gaussian of variance sigma^2 / K; the noise is drawn at that variance
//! directly instead of averaging K per-pilot draws.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{
    antenna_position, exact_distance, spherical_to_cartesian, CartesianPosition,
    SphericalPosition, UpaConfig,
};

type GainFn = dyn Fn(&CartesianPosition, &CartesianPosition) -> (f64, f64) + Send + Sync;

/// Effective-aperture and polarization gains (G1, G2), either constants or
/// functions of the user and element positions.
#[derive(Clone)]
pub struct ChannelGains {
    kind: GainKind,
}

#[derive(Clone)]
enum GainKind {
    Constant { g1: f64, g2: f64 },
    Custom(Arc<GainFn>),
}

impl ChannelGains {
    /// Fixed gains; both must be non-negative.
    pub fn constant(g1: f64, g2: f64) -> Result<Self> {
        if !(g1 >= 0.0) || !(g2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gains ({g1}, {g2}) must be non-negative"
            )));
        }
        Ok(Self {
            kind: GainKind::Constant { g1, g2 },
        })
    }

    /// Ideal isotropic-element gains: G1 = 1, G2 = lambda^2 / (4 pi).
    pub fn isotropic(wavelength: f64) -> Self {
        Self {
            kind: GainKind::Constant {
                g1: 1.0,
                g2: wavelength * wavelength / (4.0 * std::f64::consts::PI),
            },
        }
    }

    /// Position-dependent gains evaluated per (user, element) pair.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CartesianPosition, &CartesianPosition) -> (f64, f64) + Send + Sync + 'static,
    {
        Self {
            kind: GainKind::Custom(Arc::new(f)),
        }
    }

    pub fn evaluate(&self, user: &CartesianPosition, element: &CartesianPosition) -> (f64, f64) {
        match &self.kind {
            GainKind::Constant { g1, g2 } => (*g1, *g2),
            GainKind::Custom(f) => f(user, element),
        }
    }
}

impl fmt::Debug for ChannelGains {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            GainKind::Constant { g1, g2 } => {
                write!(f, "ChannelGains::Constant {{ g1: {g1}, g2: {g2} }}")
            }
            GainKind::Custom(_) => write!(f, "ChannelGains::Custom"),
        }
    }
}

/// Transmit power P (W), noise power sigma^2 (W), pilot count K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    transmit_power: f64,
    noise_power: f64,
    pilot_count: u32,
}

impl RadioConfig {
    pub fn new(transmit_power: f64, noise_power: f64, pilot_count: u32) -> Result<Self> {
        if !(transmit_power > 0.0) || !transmit_power.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "transmit power {transmit_power} must be positive and finite"
            )));
        }
        if !(noise_power >= 0.0) || !noise_power.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise power {noise_power} must be non-negative and finite"
            )));
        }
        if pilot_count == 0 {
            return Err(Error::InvalidConfig("pilot count must be >= 1".into()));
        }
        Ok(Self {
            transmit_power,
            noise_power,
            pilot_count,
        })
    }

    pub fn transmit_power(&self) -> f64 {
        self.transmit_power
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn pilot_count(&self) -> u32 {
        self.pilot_count
    }

    pub fn with_pilot_count(&self, pilot_count: u32) -> Result<Self> {
        Self::new(self.transmit_power, self.noise_power, pilot_count)
    }
}

/// dBm to watts: 10^((dbm - 30) / 10).
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Averaged complex observations y_{n,m} over the (2N+1)x(2N+1) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotField {
    half_size: i64,
    values: Vec<Complex64>,
}

impl PilotField {
    /// Row-major values, n varying slowest from -N to N, m from -N to N.
    pub fn from_values(half_size: i64, values: Vec<Complex64>) -> Result<Self> {
        if half_size < 0 {
            return Err(Error::InvalidConfig(format!(
                "half_size {half_size} must be non-negative"
            )));
        }
        let side = (2 * half_size + 1) as usize;
        if values.len() != side * side {
            return Err(Error::InvalidConfig(format!(
                "expected {} values for half_size {half_size}, got {}",
                side * side,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite observation {v}")));
        }
        Ok(Self { half_size, values })
    }

    pub fn half_size(&self) -> i64 {
        self.half_size
    }

    pub fn get(&self, n: i64, m: i64) -> Result<Complex64> {
        let nn = self.half_size;
        if n < -nn || n > nn || m < -nn || m > nn {
            return Err(Error::IndexOutOfRange {
                n,
                m,
                half_size: nn,
            });
        }
        Ok(self.at(n, m))
    }

    pub(crate) fn at(&self, n: i64, m: i64) -> Complex64 {
        let side = (2 * self.half_size + 1) as i64;
        self.values[((n + self.half_size) * side + (m + self.half_size)) as usize]
    }

    /// The field multiplied elementwise by a complex constant.
    pub fn scaled(&self, factor: Complex64) -> PilotField {
        PilotField {
            half_size: self.half_size,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// h_{n,m} = sqrt(G1 G2) / (4 pi rho) * exp(-j 2 pi rho / lambda).
pub fn channel_coefficient(
    p: &SphericalPosition,
    n: i64,
    m: i64,
    cfg: &UpaConfig,
    gains: &ChannelGains,
) -> Result<Complex64> {
    let rho = exact_distance(p, n, m, cfg)?;
    if rho == 0.0 {
        return Err(Error::ZeroDistance { n, m });
    }
    let user = spherical_to_cartesian(p);
    let element = antenna_position(n, m, cfg)?;
    let (g1, g2) = gains.evaluate(&user, &element);
    let magnitude = (g1 * g2).sqrt() / (4.0 * std::f64::consts::PI * rho);
    let phase = -2.0 * std::f64::consts::PI * rho / cfg.wavelength();
    Ok(Complex64::from_polar(magnitude, phase))
}

/// Simulates the averaged pilot observation y_{n,m} = sqrt(P) h_{n,m} + w_{n,m}
/// for every element, with w drawn i.i.d. at variance sigma^2 / K. Zero noise
/// power yields the exact noiseless field without consuming the generator.
pub fn simulate_pilot_field<R: Rng>(
    p: &SphericalPosition,
    cfg: &UpaConfig,
    gains: &ChannelGains,
    radio: &RadioConfig,
    rng: &mut R,
) -> Result<PilotField> {
    p.validate()?;
    let nn = cfg.half_size();
    let side = cfg.side();
    let sqrt_p = radio.transmit_power().sqrt();
    let noisy = radio.noise_power() > 0.0;
    // Per-quadrature standard deviation of the averaged noise.
    let std = (radio.noise_power() / (2.0 * radio.pilot_count() as f64)).sqrt();
    let mut values = Vec::with_capacity(side * side);
    for n in -nn..=nn {
        for m in -nn..=nn {
            let h = channel_coefficient(p, n, m, cfg, gains)?;
            let mut y = sqrt_p * h;
            if noisy {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                y += Complex64::new(std * re, std * im);
            }
            values.push(y);
        }
    }
    PilotField::from_values(nn, values)
}
