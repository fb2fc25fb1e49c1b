//! Adjacent phase-differences, prefix-summed long baselines, and model sums.
//!
//! For spacing at or below half a wavelength the wrapped phase of the ratio of
//! neighboring observations equals the true distance-difference phase, so
//! summing adjacent differences along a row or column telescopes into the
//! unwrapped long-baseline phase-difference. Prefix arrays anchored at index
//! -N make every baseline lookup O(1). The same sums are predicted from the
//! transformed unknowns (A, B, C) for the least-squares fit.

use num_bigint::BigUint;

use crate::channel::PilotField;
use crate::error::{Error, Result};
use crate::geometry::{AbcEstimate, UpaConfig};

/// Wrapped phase-differences between adjacent elements along both array axes,
/// each in (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacentDiffs {
    half_size: i64,
    /// arg(y_{n,m} / y_{n-1,m}) for n in -N+1..=N, m in -N..=N.
    x_diffs: Vec<f64>,
    /// arg(y_{n,m} / y_{n,m-1}) for n in -N..=N, m in -N+1..=N.
    z_diffs: Vec<f64>,
}

impl AdjacentDiffs {
    pub fn half_size(&self) -> i64 {
        self.half_size
    }

    pub fn x_diff(&self, n: i64, m: i64) -> Result<f64> {
        let nn = self.half_size;
        if n < -nn + 1 || n > nn || m < -nn || m > nn {
            return Err(Error::IndexOutOfRange {
                n,
                m,
                half_size: nn,
            });
        }
        Ok(self.x_diffs[((n + nn - 1) * (2 * nn + 1) + (m + nn)) as usize])
    }

    pub fn z_diff(&self, n: i64, m: i64) -> Result<f64> {
        let nn = self.half_size;
        if n < -nn || n > nn || m < -nn + 1 || m > nn {
            return Err(Error::IndexOutOfRange {
                n,
                m,
                half_size: nn,
            });
        }
        Ok(self.z_diffs[((n + nn) * (2 * nn) + (m + nn - 1)) as usize])
    }
}

/// Which array axis a baseline runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// x-axis: the n index varies, m is fixed.
    Horizontal,
    /// z-axis: the m index varies, n is fixed.
    Vertical,
}

/// A summed phase-difference baseline: from `start` to `end` along `axis`,
/// at the fixed perpendicular index `fixed`. Lookups require start < end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SumIndex {
    pub axis: Axis,
    pub start: i64,
    pub end: i64,
    pub fixed: i64,
}

impl SumIndex {
    pub fn horizontal(start: i64, end: i64, fixed: i64) -> Self {
        Self {
            axis: Axis::Horizontal,
            start,
            end,
            fixed,
        }
    }

    pub fn vertical(start: i64, end: i64, fixed: i64) -> Self {
        Self {
            axis: Axis::Vertical,
            start,
            end,
            fixed,
        }
    }

    fn in_bounds(&self, half_size: i64) -> bool {
        let ok = |i: i64| (-half_size..=half_size).contains(&i);
        ok(self.start) && ok(self.end) && ok(self.fixed)
    }

    fn err(&self) -> Error {
        Error::InvalidSumIndex {
            axis: match self.axis {
                Axis::Horizontal => "horizontal",
                Axis::Vertical => "vertical",
            },
            l: self.start,
            m: self.end,
            fixed: self.fixed,
        }
    }
}

/// All summed phase-differences along both axes, stored as per-row and
/// per-column prefix sums anchored at index -N.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSumSet {
    cfg: UpaConfig,
    /// Prefix over n at fixed m: h_prefix(n, m) = sum of x_diffs up to n, h_prefix(-N, m) = 0.
    h_prefix: Vec<f64>,
    /// Prefix over m at fixed n: v_prefix(n, m) = sum of z_diffs up to m, v_prefix(n, -N) = 0.
    v_prefix: Vec<f64>,
}

impl PhaseSumSet {
    pub fn config(&self) -> &UpaConfig {
        &self.cfg
    }

    fn grid_at(&self, grid: &[f64], n: i64, m: i64) -> f64 {
        let nn = self.cfg.half_size();
        grid[((n + nn) * (2 * nn + 1) + (m + nn)) as usize]
    }

    pub(crate) fn h_prefix_at(&self, n: i64, m: i64) -> f64 {
        self.grid_at(&self.h_prefix, n, m)
    }

    pub(crate) fn v_prefix_at(&self, n: i64, m: i64) -> f64 {
        self.grid_at(&self.v_prefix, n, m)
    }
}

/// Wrapped phase-differences between adjacent elements: x_diffs(n, m) =
/// arg(y_{n,m} / y_{n-1,m}), z_diffs(n, m) = arg(y_{n,m} / y_{n,m-1}).
pub fn adjacent_phase_diffs(field: &PilotField) -> Result<AdjacentDiffs> {
    let nn = field.half_size();
    for n in -nn..=nn {
        for m in -nn..=nn {
            if field.at(n, m).norm_sqr() == 0.0 {
                return Err(Error::DegenerateObservation { n, m });
            }
        }
    }
    let wrap = |a: f64| {
        // atan2 yields [-pi, pi]; fold the closed lower endpoint onto +pi.
        if a <= -std::f64::consts::PI {
            a + 2.0 * std::f64::consts::PI
        } else {
            a
        }
    };
    let mut x_diffs = Vec::with_capacity((2 * nn * (2 * nn + 1)) as usize);
    for n in (-nn + 1)..=nn {
        for m in -nn..=nn {
            x_diffs.push(wrap((field.at(n, m) / field.at(n - 1, m)).arg()));
        }
    }
    let mut z_diffs = Vec::with_capacity((2 * nn * (2 * nn + 1)) as usize);
    for n in -nn..=nn {
        for m in (-nn + 1)..=nn {
            z_diffs.push(wrap((field.at(n, m) / field.at(n, m - 1)).arg()));
        }
    }
    Ok(AdjacentDiffs {
        half_size: nn,
        x_diffs,
        z_diffs,
    })
}

/// Builds both prefix-sum grids in one pass over the diffs.
pub fn build_phase_sums(diffs: &AdjacentDiffs, cfg: &UpaConfig) -> Result<PhaseSumSet> {
    if diffs.half_size() != cfg.half_size() {
        return Err(Error::InvalidConfig(format!(
            "diff grid half-size {} does not match configuration {}",
            diffs.half_size(),
            cfg.half_size()
        )));
    }
    let nn = cfg.half_size();
    let side = cfg.side();
    let mut h_prefix = vec![0.0; side * side];
    let mut v_prefix = vec![0.0; side * side];
    let at = |n: i64, m: i64| ((n + nn) * (2 * nn + 1) + (m + nn)) as usize;
    for m in -nn..=nn {
        let mut acc = 0.0;
        for n in (-nn + 1)..=nn {
            acc += diffs.x_diff(n, m)?;
            h_prefix[at(n, m)] = acc;
        }
    }
    for n in -nn..=nn {
        let mut acc = 0.0;
        for m in (-nn + 1)..=nn {
            acc += diffs.z_diff(n, m)?;
            v_prefix[at(n, m)] = acc;
        }
    }
    Ok(PhaseSumSet {
        cfg: *cfg,
        h_prefix,
        v_prefix,
    })
}

/// Measured summed phase-difference for the baseline, in O(1) from the prefixes.
pub fn lookup_sum(sums: &PhaseSumSet, idx: &SumIndex) -> Result<f64> {
    let nn = sums.cfg.half_size();
    if !idx.in_bounds(nn) || idx.start >= idx.end {
        return Err(idx.err());
    }
    Ok(match idx.axis {
        Axis::Horizontal => {
            sums.h_prefix_at(idx.end, idx.fixed) - sums.h_prefix_at(idx.start, idx.fixed)
        }
        Axis::Vertical => {
            sums.v_prefix_at(idx.fixed, idx.end) - sums.v_prefix_at(idx.fixed, idx.start)
        }
    })
}

fn model_radicand(e: &AbcEstimate, varying: i64, fixed_n: f64, fixed_m: f64, d: f64, axis: Axis) -> f64 {
    let i = varying as f64;
    match axis {
        Axis::Horizontal => {
            e.a + d * d * (i * i + fixed_m * fixed_m) - 2.0 * e.b * i * d - 2.0 * e.c * fixed_m * d
        }
        Axis::Vertical => {
            e.a + d * d * (fixed_n * fixed_n + i * i) - 2.0 * e.b * fixed_n * d - 2.0 * e.c * i * d
        }
    }
}

/// Model prediction of a summed phase-difference from (A, B, C):
/// -(2 pi / lambda) (u(end) - u(start)) with u the square-root distance terms.
/// Antisymmetric under swapping start and end.
pub fn model_sum(e: &AbcEstimate, idx: &SumIndex, cfg: &UpaConfig) -> Result<f64> {
    let nn = cfg.half_size();
    if !idx.in_bounds(nn) {
        return Err(idx.err());
    }
    let d = cfg.spacing();
    let (fixed_n, fixed_m) = match idx.axis {
        Axis::Horizontal => (0.0, idx.fixed as f64),
        Axis::Vertical => (idx.fixed as f64, 0.0),
    };
    let mut u = [0.0; 2];
    for (slot, varying) in u.iter_mut().zip([idx.start, idx.end]) {
        let rad = model_radicand(e, varying, fixed_n, fixed_m, d, idx.axis);
        if rad < 0.0 {
            return Err(Error::InfeasibleParameters(rad));
        }
        *slot = rad.sqrt();
    }
    Ok(-(2.0 * std::f64::consts::PI / cfg.wavelength()) * (u[1] - u[0]))
}

/// Analytic gradient of `model_sum` with respect to (A, B, C).
pub fn model_sum_gradient(e: &AbcEstimate, idx: &SumIndex, cfg: &UpaConfig) -> Result<[f64; 3]> {
    let nn = cfg.half_size();
    if !idx.in_bounds(nn) {
        return Err(idx.err());
    }
    let d = cfg.spacing();
    let lambda = cfg.wavelength();
    let (fixed_n, fixed_m) = match idx.axis {
        Axis::Horizontal => (0.0, idx.fixed as f64),
        Axis::Vertical => (idx.fixed as f64, 0.0),
    };
    let mut inv = [0.0; 2];
    for (slot, varying) in inv.iter_mut().zip([idx.start, idx.end]) {
        let rad = model_radicand(e, varying, fixed_n, fixed_m, d, idx.axis);
        if rad <= 0.0 {
            return Err(Error::InfeasibleParameters(rad));
        }
        *slot = 1.0 / rad.sqrt();
    }
    let delta_inv = inv[1] - inv[0];
    let scale = 2.0 * std::f64::consts::PI * d / lambda;
    let weighted = idx.end as f64 * inv[1] - idx.start as f64 * inv[0];
    let da = -(std::f64::consts::PI / lambda) * delta_inv;
    let (db, dc) = match idx.axis {
        Axis::Horizontal => (scale * weighted, scale * fixed_m * delta_inv),
        Axis::Vertical => (scale * fixed_n * delta_inv, scale * weighted),
    };
    Ok([da, db, dc])
}

/// Distinct baseline sums and distinct three-equation systems for half-size N,
/// in exact integer arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemCount {
    /// Q = (2N+1) * C(2N+1, 2) summed phase-differences per axis.
    pub sums: BigUint,
    /// 2 C(Q,3) + 2 C(Q,2) Q three-equation systems across both axes.
    pub systems: BigUint,
}

fn binomial(n: &BigUint, k: u32) -> BigUint {
    let mut result = BigUint::from(1u32);
    let kb = BigUint::from(k);
    if n < &kb {
        return BigUint::from(0u32);
    }
    // Multiplicative form; each division is exact because result holds C(n-k+i, i).
    for i in 1..=k {
        result = result * (n - &kb + BigUint::from(i)) / BigUint::from(i);
    }
    result
}

/// Exact counts of available baseline sums and of three-equation systems.
pub fn count_systems(half_size: u32) -> SystemCount {
    let side = BigUint::from(2 * u64::from(half_size) + 1);
    let sums = &side * binomial(&side, 2);
    let two = BigUint::from(2u32);
    let systems = &two * binomial(&sums, 3) + &two * binomial(&sums, 2) * &sums;
    SystemCount { sums, systems }
}
