//! Oblique phase-shifted sinusoidal patterns and pattern budgets.
//!
//! A pattern of direction `theta` varies only along the direction line: every
//! projector pixel `(u', v')` is assigned the integer bin
//! `round(u' cos(theta) + v' sin(theta) + offset)` and the sinusoid is
//! evaluated on that bin. Binning the projection coordinate makes the captured
//! spectrum the exact DFT of the discrete Radon transform, so the
//! reconstructed projection function and the brute-force oracle agree to
//! rounding error.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::geometry::DeviceSpec;
use crate::{Error, Result};

/// Slack applied before the ceiling so `cos(pi/2) ~ 6e-17` does not bump `L`.
const CEIL_SLACK: f64 = 1e-9;

fn check_angle(theta: f64) -> Result<()> {
    if !(0.0..PI).contains(&theta) {
        return Err(Error::AngleDomain(theta));
    }
    Ok(())
}

/// Equivalent projector resolution `L_theta` along the direction line.
pub fn equivalent_resolution(theta: f64, m: usize, n: usize) -> Result<usize> {
    check_angle(theta)?;
    let (c, s) = (theta.cos(), theta.sin());
    let len = if theta <= FRAC_PI_2 { m as f64 * c + n as f64 * s } else { -(m as f64) * c + n as f64 * s };
    Ok(((len - CEIL_SLACK).ceil() as usize).max(1))
}

/// Index shift that keeps projection coordinates non-negative when `cos < 0`.
pub fn rho_offset(theta: f64, m: usize) -> Result<i64> {
    check_angle(theta)?;
    if theta <= FRAC_PI_2 {
        return Ok(0);
    }
    Ok((-(m as f64) * theta.cos() - CEIL_SLACK).ceil() as i64)
}

/// Discretised direction line: angle, length `L_theta` and index offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionAxis {
    pub theta: f64,
    pub length: usize,
    pub offset: i64,
}

impl ProjectionAxis {
    pub fn new(theta: f64, device: &DeviceSpec) -> Result<Self> {
        let length = equivalent_resolution(theta, device.projector_cols, device.projector_rows)?;
        let offset = rho_offset(theta, device.projector_cols)?;
        Ok(ProjectionAxis { theta, length, offset })
    }

    pub fn from_degrees(deg: f64, device: &DeviceSpec) -> Result<Self> {
        Self::new(deg.to_radians(), device)
    }

    /// Nearest integer bin of a projector pixel, clamped to `[0, length)`.
    ///
    /// Rounding can push a corner pixel one bin past `length` when the
    /// direction is close to the horizontal; such pixels share the last bin.
    pub fn bin(&self, u: f64, v: f64) -> i64 {
        let b = (u * self.theta.cos() + v * self.theta.sin() + self.offset as f64 + 0.5).floor() as i64;
        b.clamp(0, self.length as i64 - 1)
    }

    /// Continuous bin coordinate of a geometric projection `rho`.
    pub fn rho_to_bin(&self, rho: f64) -> f64 {
        rho + self.offset as f64
    }

    /// Geometric projection coordinate `u' cos + v' sin` of a bin coordinate.
    pub fn bin_to_rho(&self, bin: f64) -> f64 {
        bin - self.offset as f64
    }

    /// Bin of every projector pixel, row-major.
    pub fn bin_map(&self, device: &DeviceSpec) -> Vec<u32> {
        let mut out = Vec::with_capacity(device.projector_pixels());
        for v in 0..device.projector_rows {
            for u in 0..device.projector_cols {
                out.push(self.bin(u as f64, v as f64) as u32);
            }
        }
        out
    }

    pub fn degrees(&self) -> f64 {
        self.theta.to_degrees()
    }
}

/// Parameters of one oblique pattern family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub theta: f64,
    /// `L_theta` for coarse/full capture, `M_theta` for fine capture.
    pub period: usize,
    pub frequencies: Vec<usize>,
    pub phase_count: usize,
    pub mean: f64,
    pub contrast: f64,
}

pub const DEFAULT_MEAN: f64 = 0.5;
pub const DEFAULT_CONTRAST: f64 = 0.4;

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        check_angle(self.theta)?;
        if self.period == 0 {
            return Err(Error::Domain("pattern period must be >= 1".into()));
        }
        if self.phase_count < 3 {
            return Err(Error::Domain(format!("phase count {} < 3", self.phase_count)));
        }
        if let Some(&k) = self.frequencies.iter().find(|&&k| k >= self.period) {
            return Err(Error::Domain(format!("frequency {k} outside [0, {})", self.period)));
        }
        let (a, b) = (self.mean, self.contrast);
        if !(b > 0.0 && a - b >= 0.0 && a + b <= 1.0) {
            return Err(Error::Domain(format!("mean {a} / contrast {b} not a physical radiance")));
        }
        Ok(())
    }

    /// Scale `S b / 2` carried by reconstructed projection functions.
    pub fn scale(&self) -> f64 {
        self.phase_count as f64 * self.contrast / 2.0
    }

    /// Value of pattern `(k, i)` as a function of the projection bin.
    pub fn profile(&self, k: usize, i: usize) -> Vec<f64> {
        pattern_profile(self.period, k, i, self.phase_count, self.mean, self.contrast, self.period)
    }
}

/// Pattern value along `len` bins for frequency `k` over `period`.
///
/// Bins beyond the period wrap; the phase is reduced modulo the period in
/// integer arithmetic so equal residues give bit-equal values.
pub fn pattern_profile(period: usize, k: usize, i: usize, s: usize, a: f64, b: f64, len: usize) -> Vec<f64> {
    let shift = TAU * i as f64 / s as f64;
    (0..len)
        .map(|bin| {
            let r = (k * bin) % period;
            a + b * (TAU * r as f64 / period as f64 + shift).cos()
        })
        .collect()
}

/// Projector raster of radiances in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternImage {
    pub cols: usize,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl PatternImage {
    pub fn constant(cols: usize, rows: usize, value: f64) -> Self {
        PatternImage { cols, rows, data: vec![value; cols * rows] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.cols + u]
    }
}

/// Cached projection bins for one direction, used to rasterise many patterns.
#[derive(Clone, Debug)]
pub struct PatternRaster {
    pub axis: ProjectionAxis,
    device: DeviceSpec,
    bins: Vec<u32>,
}

impl PatternRaster {
    pub fn new(axis: ProjectionAxis, device: DeviceSpec) -> Self {
        let bins = axis.bin_map(&device);
        PatternRaster { axis, device, bins }
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn render(&self, family: &PatternSpec, k: usize, i: usize) -> Result<PatternImage> {
        family.validate()?;
        if i >= family.phase_count {
            return Err(Error::Domain(format!("phase index {i} >= {}", family.phase_count)));
        }
        if !family.frequencies.contains(&k) {
            return Err(Error::Domain(format!("frequency {k} not in pattern family")));
        }
        let profile = pattern_profile(family.period, k, i, family.phase_count, family.mean, family.contrast, self.axis.length);
        let data = self.bins.iter().map(|&b| profile[b as usize]).collect();
        Ok(PatternImage { cols: self.device.projector_cols, rows: self.device.projector_rows, data })
    }
}

/// Rasterise pattern `(k, i)` of `family` on the projector of `device`.
pub fn generate_pattern(family: &PatternSpec, k: usize, i: usize, device: &DeviceSpec) -> Result<PatternImage> {
    let axis = ProjectionAxis::new(family.theta, device)?;
    PatternRaster::new(axis, *device).render(family, k, i)
}

/// Inputs of the pattern-count formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureBudget {
    /// Coarse frequency count N_c.
    pub coarse_frequencies: usize,
    /// Fine support size N_f (= M_theta).
    pub fine_support: usize,
    /// Capture ratio of the fine step, `0 < eta <= 1`.
    pub ratio: f64,
    pub phase_count: usize,
    pub directions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternBudget {
    pub per_direction: usize,
    pub total: usize,
}

fn check_ratio(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("capture ratio {eta} outside (0, 1]")));
    }
    Ok(())
}

/// Number of fine frequencies projected at capture ratio `eta`.
///
/// The per-branch base count is scaled by `eta` and rounded to nearest.
pub fn fine_frequency_count(fine_support: usize, eta: f64, phase_count: usize) -> Result<usize> {
    check_ratio(eta)?;
    let nf = fine_support as f64;
    let base = if phase_count % 2 == 0 {
        nf / 2.0
    } else if fine_support % 2 == 1 {
        (nf + 1.0) / 2.0
    } else {
        nf / 2.0 + 1.0
    };
    Ok((eta * base).round() as usize)
}

/// Independent low frequencies retained from a period-`period` spectrum.
///
/// `round(eta * (floor(period/2) + 1))`, never more than the half spectrum.
pub fn retained_frequency_count(period: usize, eta: f64) -> Result<usize> {
    check_ratio(eta)?;
    let half = period / 2 + 1;
    Ok(((eta * half as f64).round() as usize).min(half))
}

/// Pattern count per direction and in total.
pub fn pattern_count(budget: &CaptureBudget) -> Result<PatternBudget> {
    let s = budget.phase_count;
    if s < 3 {
        return Err(Error::Domain(format!("phase count {s} < 3")));
    }
    if budget.directions == 0 {
        return Err(Error::Domain("at least one direction required".into()));
    }
    let fine = fine_frequency_count(budget.fine_support, budget.ratio, s)?;
    let per = (s * budget.coarse_frequencies + s * fine)
        .checked_sub(s)
        .ok_or_else(|| Error::Domain("budget captures no frequencies".into()))?;
    Ok(PatternBudget { per_direction: per, total: per * budget.directions })
}
