//! Projection-function reconstruction from phase-shifted captures.
//!
//! The forward transform is unnormalised and the inverse carries `1/period`,
//! so every reconstructed function is the Radon projection scaled by `Sb/2`.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::ltc_sim::{GroupKind, IntensityStack, StackGroup};
use crate::patterns::retained_frequency_count;
use crate::{Error, Result};

/// Kaiser shape parameter used for every taper.
pub const DEFAULT_KAISER_BETA: f64 = 5.0;
/// Coarse frequency count.
pub const DEFAULT_COARSE_FREQUENCIES: usize = 10;
/// Gap (bins) below which neighbouring mask runs are merged.
pub const MASK_MERGE_GAP: usize = 3;
/// Runs shorter than this (bins) are dropped from the mask.
pub const MASK_MIN_RUN: usize = 2;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Real part of the normalised inverse DFT of a full-length spectrum.
fn inverse_real(mut spectrum: Vec<Complex64>) -> Vec<f64> {
    let n = spectrum.len();
    if n == 0 {
        return Vec::new();
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut spectrum));
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

/// Captured Fourier coefficients of one pixel along one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSlice {
    pub theta: f64,
    pub period: usize,
    pub frequencies: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl SpectrumSlice {
    pub fn get(&self, k: usize) -> Option<Complex64> {
        self.frequencies.iter().position(|&f| f == k).map(|i| self.values[i])
    }

    /// Expand to all `period` coefficients using conjugate symmetry for any
    /// frequency whose mirror was captured. Frequencies outside `keep` are zeroed.
    fn expand(&self, keep: impl Fn(usize) -> bool) -> Result<Vec<Complex64>> {
        let n = self.period;
        let mut full: Vec<Option<Complex64>> = vec![None; n];
        for (&k, &v) in self.frequencies.iter().zip(&self.values) {
            if k < n {
                full[k] = Some(v);
            }
        }
        (0..n)
            .map(|k| {
                let eff = k.min(n - k);
                if !keep(eff) {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                full[k]
                    .or_else(|| full[(n - k) % n].map(|c| c.conj()))
                    .ok_or_else(|| Error::IncompleteStack(format!("frequency {k} of period {n} neither captured nor mirrored")))
            })
            .collect()
    }
}

/// Spectrum value `sum_i I_i e^{j 2 pi i / S}` of one pixel.
pub fn phase_sum(intensities: &[f64]) -> Complex64 {
    let s = intensities.len() as f64;
    intensities.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (i, &x)| {
        let ph = 2.0 * PI * i as f64 / s;
        acc + Complex64::new(x * ph.cos(), x * ph.sin())
    })
}

/// Assemble `F_theta(k)` for every camera pixel from a stack group.
pub fn assemble_group_frequency(group: &StackGroup, k: usize, pixels: usize) -> Result<Vec<Complex64>> {
    let slot = group
        .frequency_slot(k)
        .ok_or_else(|| Error::IncompleteStack(format!("frequency {k} not captured for direction {}", group.direction)))?;
    if group.phase_count < 3 || group.data.len() < (slot + 1) * group.phase_count * pixels {
        return Err(Error::IncompleteStack(format!("phase images missing for frequency {k}")));
    }
    let images: Vec<&[f64]> = (0..group.phase_count).map(|i| group.image(slot, i, pixels)).collect();
    let mut buf = vec![0.0; group.phase_count];
    Ok((0..pixels)
        .map(|p| {
            for (b, img) in buf.iter_mut().zip(&images) {
                *b = img[p];
            }
            phase_sum(&buf)
        })
        .collect())
}

/// Assemble `F_theta(k)` for every camera pixel at one direction and frequency.
pub fn assemble_spectrum(stack: &IntensityStack, direction: usize, kind: GroupKind, k: usize) -> Result<Vec<Complex64>> {
    let group = stack
        .group(direction, kind)
        .ok_or_else(|| Error::IncompleteStack(format!("no {} group for direction {direction}", kind.as_str())))?;
    assemble_group_frequency(group, k, stack.pixels())
}

/// The whole captured spectrum of one pixel in one group.
pub fn pixel_spectrum(group: &StackGroup, pixel: usize, pixels: usize) -> Result<SpectrumSlice> {
    if pixel >= pixels || group.data.len() != group.pattern_count() * pixels {
        return Err(Error::IncompleteStack(format!("group for direction {} is truncated", group.direction)));
    }
    let mut buf = vec![0.0; group.phase_count];
    let values = (0..group.frequencies.len())
        .map(|slot| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = group.image(slot, i, pixels)[pixel];
            }
            phase_sum(&buf)
        })
        .collect();
    Ok(SpectrumSlice { theta: group.axis.theta, period: group.period, frequencies: group.frequencies.clone(), values })
}

/// Reconstructed 1D projection function of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionFunction {
    pub theta: f64,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Masked span `M_s` in bins; zero for an empty mask.
    pub support: usize,
    /// `Sb/2`, the factor relating values to the Radon projection.
    pub scale: f64,
    /// Mask wider than the fine period: the perfect-reconstruction
    /// precondition does not hold.
    pub aliased: bool,
}

impl ProjectionFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support == 0
    }

    pub fn masked(&self) -> Vec<f64> {
        self.values.iter().zip(&self.mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Inverse DFT of a complete (or conjugate-half) spectrum.
pub fn reconstruct_full(slice: &SpectrumSlice, scale: f64) -> Result<ProjectionFunction> {
    let spectrum = slice.expand(|_| true)?;
    let values = inverse_real(spectrum);
    let n = values.len();
    Ok(ProjectionFunction { theta: slice.theta, values, mask: vec![true; n], support: n, scale, aliased: false })
}

/// Kaiser taper on the frequency axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowProfile {
    pub beta: f64,
    /// Number of retained non-negative frequencies `K`.
    pub frequencies: usize,
}

impl WindowProfile {
    pub fn new(beta: f64, frequencies: usize) -> Self {
        WindowProfile { beta, frequencies }
    }

    /// Weight at frequency offset `k` (zero outside `|k| < K`).
    pub fn weight(&self, k: usize) -> f64 {
        let k_max = self.frequencies.saturating_sub(1);
        if k > k_max {
            return 0.0;
        }
        if k_max == 0 {
            return 1.0;
        }
        let r = k as f64 / k_max as f64;
        bessel_i0(self.beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(self.beta)
    }
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..500 {
        term *= q / (m * m) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// First zero of the rectangular-truncation kernel: `L/(2K-1)` bins.
pub fn coarse_main_lobe_half_width(length: usize, frequencies: usize) -> f64 {
    length as f64 / (2.0 * frequencies as f64 - 1.0)
}

/// Coarse frequency count needed so the widened support stays within the
/// target: solves `2R + 2L/(2K-1) = M*` for `K`, rounded to nearest.
pub fn coarse_frequencies_for_support(radius: f64, length: usize, target_support: f64) -> Result<usize> {
    let slack = target_support - 2.0 * radius;
    if !(slack > 0.0) {
        return Err(Error::Domain("target support must exceed twice the lobe radius".into()));
    }
    Ok(((2.0 * length as f64 / slack + 1.0) / 2.0).round() as usize)
}

/// Detection level for the coarse mask and for peaks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseThreshold {
    /// Fraction of the function maximum.
    pub relative: f64,
    /// Multiple of the noise standard deviation estimated from the tail.
    pub sigma_factor: f64,
    /// Absolute floor; a function whose maximum stays below it is empty.
    pub absolute: f64,
    /// Minimum peak-to-noise ratio for a pixel to count as lit.
    pub min_snr: f64,
}

impl Default for NoiseThreshold {
    fn default() -> Self {
        NoiseThreshold { relative: 0.05, sigma_factor: 3.0, absolute: 1e-6, min_snr: 6.0 }
    }
}

impl NoiseThreshold {
    /// Purely relative level, no noise estimate.
    pub fn relative(relative: f64) -> Self {
        NoiseThreshold { relative, sigma_factor: 0.0, absolute: 1e-12, min_snr: 0.0 }
    }

    /// Level to apply to `f`, or `None` when `f` holds no signal.
    pub fn level(&self, f: &[f64]) -> Option<f64> {
        let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > self.absolute) {
            return None;
        }
        let rel = self.relative * max;
        let sigma = if self.sigma_factor > 0.0 || self.min_snr > 0.0 {
            let tail: Vec<f64> = f.iter().cloned().filter(|&x| x <= rel).collect();
            if tail.is_empty() {
                0.0
            } else {
                (tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64).sqrt()
            }
        } else {
            0.0
        };
        if self.min_snr > 0.0 && max < self.min_snr * sigma {
            return None;
        }
        Some(rel.max(self.sigma_factor * sigma).max(self.absolute))
    }
}

/// Above-threshold mask cleaned by run merging, wrap resolution and
/// short-run removal.
pub fn build_mask(f: &[f64], level: f64) -> Vec<bool> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &x) in f.iter().enumerate() {
        match (x > level, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, f.len()));
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.0 - last.1 < MASK_MERGE_GAP => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    // Circular leakage: a run touching both ends of the axis is one lobe
    // wrapped around. The axis is linear, so on the side with the smaller
    // peak the part falling away from the boundary is leakage and is cut
    // at its first local minimum.
    let n = f.len();
    if merged.len() >= 2 && merged[0].0 == 0 && merged[merged.len() - 1].1 == n {
        let peak = |r: (usize, usize)| f[r.0..r.1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let last = merged.len() - 1;
        if peak(merged[0]) >= peak(merged[last]) {
            let mut e = n - 1;
            while e > merged[last].0 && f[e - 1] < f[e] {
                e -= 1;
            }
            merged[last].1 = e + 1;
        } else {
            let mut s = 0;
            while s + 1 < merged[0].1 && f[s + 1] < f[s] {
                s += 1;
            }
            merged[0].0 = s;
        }
    }
    let mut mask = vec![false; f.len()];
    for (s, e) in merged.into_iter().filter(|(s, e)| e - s >= MASK_MIN_RUN) {
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Span between the first and last set bins.
pub fn mask_span(mask: &[bool]) -> usize {
    match (mask.iter().position(|&m| m), mask.iter().rposition(|&m| m)) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    }
}

/// Windowed low-frequency reconstruction over the full period and its mask.
pub fn coarse_localize(slice: &SpectrumSlice, window: WindowProfile, threshold: &NoiseThreshold, scale: f64) -> Result<ProjectionFunction> {
    let k = window.frequencies;
    if k < 2 {
        return Err(Error::Domain(format!("coarse step needs at least 2 frequencies, got {k}")));
    }
    if let Some(missing) = (0..k).find(|&f| slice.get(f).is_none()) {
        return Err(Error::IncompleteStack(format!("coarse frequency {missing} missing")));
    }
    let full = slice.expand(|f| f < k)?;
    let tapered: Vec<Complex64> =
        full.iter().enumerate().map(|(i, &c)| c * window.weight(i.min(slice.period - i))).collect();
    let values = inverse_real(tapered);
    let mask = match threshold.level(&values) {
        Some(level) => build_mask(&values, level),
        None => vec![false; values.len()],
    };
    let support = mask_span(&mask);
    Ok(ProjectionFunction { theta: slice.theta, values, mask, support, scale, aliased: false })
}

/// Fine period for a direction: the largest coarse support over all pixels,
/// clamped to `[2, length]`.
pub fn fine_period(supports: impl IntoIterator<Item = usize>, length: usize) -> usize {
    supports.into_iter().max().unwrap_or(0).clamp(2, length.max(2))
}

fn tile_and_mask(patch: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = patch.len();
    mask.iter().enumerate().map(|(n, &on)| if on { patch[n % m] } else { 0.0 }).collect()
}

fn fine_from_spectrum(slice: &SpectrumSlice, spectrum: Vec<Complex64>, mask: &[bool], scale: f64) -> ProjectionFunction {
    let support = mask_span(mask);
    let aliased = support > slice.period;
    if aliased {
        log::warn!("mask span {support} exceeds fine period {}; slice extension aliases", slice.period);
    }
    let patch = inverse_real(spectrum);
    let values = tile_and_mask(&patch, mask);
    ProjectionFunction { theta: slice.theta, values, mask: mask.to_vec(), support, scale, aliased }
}

/// Slice extension: inverse transform over the fine period, periodic
/// extension across the full length of `mask`, then masking.
pub fn fine_reconstruct(slice: &SpectrumSlice, mask: &[bool], scale: f64) -> Result<ProjectionFunction> {
    if slice.period == 0 || slice.period > mask.len() {
        return Err(Error::Contract(format!("fine period {} incompatible with length {}", slice.period, mask.len())));
    }
    let spectrum = slice.expand(|_| true)?;
    Ok(fine_from_spectrum(slice, spectrum, mask, scale))
}

/// Fine reconstruction from the lowest `round(eta*(M/2+1))` frequencies,
/// capped at the contiguous run actually captured. Dropped frequencies are
/// Kaiser-tapered at the truncation edge when `eta < 1` and cut sharply
/// otherwise.
pub fn partial_fine_reconstruct(slice: &SpectrumSlice, mask: &[bool], eta: f64, beta: f64, scale: f64) -> Result<ProjectionFunction> {
    if slice.period == 0 || slice.period > mask.len() {
        return Err(Error::Contract(format!("fine period {} incompatible with length {}", slice.period, mask.len())));
    }
    let n = slice.period;
    let half = n / 2 + 1;
    let available = (0..half).take_while(|&k| slice.get(k).is_some()).count();
    let retained = retained_frequency_count(n, eta)?.min(available);
    if retained < 2 {
        return Err(Error::Domain(format!("capture ratio {eta} retains {retained} frequencies, need at least 2")));
    }
    if retained >= half {
        return fine_reconstruct(slice, mask, scale);
    }
    let full = slice.expand(|f| f < retained)?;
    let spectrum = if eta < 1.0 {
        let window = WindowProfile::new(beta, retained);
        full.iter().enumerate().map(|(i, &c)| c * window.weight(i.min(n - i))).collect()
    } else {
        full
    };
    Ok(fine_from_spectrum(slice, spectrum, mask, scale))
}
