//! End-to-end orchestration: simulated capture, reconstruction, matching,
//! point clouds and the capture-ratio sweep.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::config::{FitKind, RunConfig, Strategy};
use crate::geometry::{DeviceSpec, StereoRig};
use crate::io::PatternSet;
use crate::ltc_sim::{GroupKind, IntensityStack, NoiseSource, RasterizedScene, StackGroup};
use crate::matching::{all_direction_match, find_peaks, ransac_match, unidirectional_match, PeakList};
use crate::metrics::{compare_clouds, SweepReport, SweepRow};
use crate::patterns::{fine_frequency_count, pattern_count, CaptureBudget, PatternSpec, ProjectionAxis};
use crate::pointcloud::{build_cloud, continuity_filter, fit_plane_rms, fit_sphere, PixelMatches, PointCloud};
use crate::recon::{coarse_localize, fine_period, partial_fine_reconstruct, pixel_spectrum, ProjectionFunction, SpectrumSlice, WindowProfile};
use crate::{Error, Result};

fn scale(run: &RunConfig) -> f64 {
    run.phase_count as f64 * run.contrast / 2.0
}

fn family(run: &RunConfig, axis: &ProjectionAxis, period: usize, frequencies: Vec<usize>) -> PatternSpec {
    PatternSpec { theta: axis.theta, period, frequencies, phase_count: run.phase_count, mean: run.mean, contrast: run.contrast }
}

/// Coarse frequencies actually captured along an axis.
pub fn coarse_frequencies(run: &RunConfig, axis: &ProjectionAxis) -> Vec<usize> {
    (0..run.coarse_frequencies.min(axis.length / 2 + 1)).collect()
}

/// Fine frequencies captured over period `period` at ratio `eta`. The DC
/// term is shared with the coarse set and not projected again.
pub fn fine_frequencies(run: &RunConfig, period: usize, eta: f64) -> Result<Vec<usize>> {
    let n = fine_frequency_count(period, eta, run.phase_count)?.min(period / 2 + 1);
    Ok((1..n.max(1)).collect())
}

/// Coarse reconstruction of every pixel from a coarse group.
pub fn coarse_functions(group: &StackGroup, pixels: usize, run: &RunConfig) -> Result<Vec<ProjectionFunction>> {
    let window = WindowProfile::new(run.thresholds.kaiser_beta, group.frequencies.len());
    let threshold = run.coarse_threshold();
    let s = scale(run);
    (0..pixels)
        .into_par_iter()
        .map(|p| coarse_localize(&pixel_spectrum(group, p, pixels)?, window, &threshold, s))
        .collect()
}

/// Simulate the adaptive two-step capture.
///
/// Per direction the coarse patterns are captured first; the fine period is
/// the largest coarse support over all pixels (or the configured value) and
/// the fine patterns are captured over it.
pub fn capture(scene: &RasterizedScene, run: &RunConfig) -> Result<IntensityStack> {
    run.validate()?;
    let dev = scene.device;
    let mut noise = NoiseSource::new(run.noise_sigma, run.seed)?;
    let mut stack = IntensityStack::new(dev.camera_cols, dev.camera_rows, run.mean, run.contrast);
    for (d, &deg) in run.directions.iter().enumerate() {
        let axis = ProjectionAxis::from_degrees(deg, &dev)?;
        let coarse = scene.capture_group(d, axis, GroupKind::Coarse, &family(run, &axis, axis.length, coarse_frequencies(run, &axis)), &mut noise)?;
        let period = match run.fine_period {
            Some(m) => m.clamp(2, axis.length),
            None => fine_period(coarse_functions(&coarse, scene.pixels(), run)?.iter().map(|f| f.support), axis.length),
        };
        log::info!("direction {deg} deg: L = {}, fine period {period}", axis.length);
        let fine_spec = family(run, &axis, period, fine_frequencies(run, period, run.eta)?);
        let fine = scene.capture_group(d, axis, GroupKind::Fine, &fine_spec, &mut noise)?;
        stack.groups.push(coarse);
        stack.groups.push(fine);
    }
    Ok(stack)
}

/// Fine period of every direction in a captured stack.
pub fn stack_fine_periods(stack: &IntensityStack) -> Result<Vec<usize>> {
    Ok(direction_groups(stack)?.into_iter().map(|(_, f)| f.period).collect())
}

/// Coarse and fine pattern groups of every direction.
pub fn pattern_sets(run: &RunConfig, device: &DeviceSpec, fine_periods: &[usize]) -> Result<Vec<PatternSet>> {
    if fine_periods.len() != run.directions.len() {
        return Err(Error::DimensionMismatch { expected: format!("{} fine periods", run.directions.len()), got: fine_periods.len().to_string() });
    }
    let mut sets = Vec::new();
    for (&deg, &m) in run.directions.iter().zip(fine_periods) {
        let axis = ProjectionAxis::from_degrees(deg, device)?;
        let m = m.clamp(2, axis.length);
        sets.push(PatternSet { kind: GroupKind::Coarse, axis, family: family(run, &axis, axis.length, coarse_frequencies(run, &axis)) });
        sets.push(PatternSet { kind: GroupKind::Fine, axis, family: family(run, &axis, m, fine_frequencies(run, m, run.eta)?) });
    }
    Ok(sets)
}

/// Reconstructed projection functions of one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionRecon {
    pub direction: usize,
    pub axis: ProjectionAxis,
    pub fine_period: usize,
    pub functions: Vec<ProjectionFunction>,
}

fn direction_groups(stack: &IntensityStack) -> Result<Vec<(&StackGroup, &StackGroup)>> {
    let mut dirs: Vec<usize> = stack.groups.iter().map(|g| g.direction).collect();
    dirs.dedup();
    dirs.iter()
        .map(|&d| {
            let c = stack.group(d, GroupKind::Coarse).ok_or_else(|| Error::IncompleteStack(format!("direction {d} has no coarse group")))?;
            let f = stack.group(d, GroupKind::Fine).ok_or_else(|| Error::IncompleteStack(format!("direction {d} has no fine group")))?;
            Ok((c, f))
        })
        .collect()
}

/// Fine spectrum of one pixel with the DC term taken from the coarse capture.
pub fn fine_slice(coarse: &StackGroup, fine: &StackGroup, pixel: usize, pixels: usize) -> Result<SpectrumSlice> {
    let mut s = pixel_spectrum(fine, pixel, pixels)?;
    if s.get(0).is_none() {
        let c = pixel_spectrum(coarse, pixel, pixels)?;
        let dc = c.get(0).ok_or_else(|| Error::IncompleteStack("coarse group lacks the DC term".into()))?;
        s.frequencies.insert(0, 0);
        s.values.insert(0, dc);
    }
    Ok(s)
}

/// Coarse-to-fine reconstruction of every pixel and direction at ratio `eta`.
pub fn reconstruct(stack: &IntensityStack, run: &RunConfig, eta: f64) -> Result<Vec<DirectionRecon>> {
    let pixels = stack.pixels();
    let s = scale(run);
    direction_groups(stack)?
        .into_iter()
        .map(|(coarse, fine)| {
            let masks = coarse_functions(coarse, pixels, run)?;
            let functions = masks
                .into_par_iter()
                .enumerate()
                .map(|(p, c)| {
                    if c.is_empty() {
                        return Ok(ProjectionFunction { values: vec![0.0; c.len()], ..c });
                    }
                    let slice = fine_slice(coarse, fine, p, pixels)?;
                    partial_fine_reconstruct(&slice, &c.mask, eta, run.thresholds.kaiser_beta, s)
                })
                .collect::<Result<Vec<_>>>()?;
            let aliased = functions.iter().filter(|f| f.aliased).count();
            if aliased > 0 {
                log::warn!("direction {}: {aliased} pixels exceed the fine period", coarse.direction);
            }
            Ok(DirectionRecon { direction: coarse.direction, axis: coarse.axis, fine_period: fine.period, functions })
        })
        .collect()
}

/// Fine-step spectra `F(k)`, `k < period/2`, of every lit pixel of one direction.
pub fn fine_spectra(stack: &IntensityStack, run: &RunConfig, direction: usize) -> Result<(usize, Vec<Vec<Complex64>>)> {
    let pixels = stack.pixels();
    let (coarse, fine) = direction_groups(stack)?
        .into_iter()
        .find(|(c, _)| c.direction == direction)
        .ok_or_else(|| Error::IncompleteStack(format!("no direction {direction}")))?;
    let masks = coarse_functions(coarse, pixels, run)?;
    let period = fine.period;
    let mut out = Vec::new();
    for (p, m) in masks.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let s = fine_slice(coarse, fine, p, pixels)?;
        let row: Option<Vec<Complex64>> = (0..period / 2).map(|k| s.get(k)).collect();
        out.push(row.ok_or_else(|| Error::IncompleteStack("energy distribution needs the full fine half spectrum".into()))?);
    }
    Ok((period, out))
}

/// Peaks of every direction for one pixel.
pub fn pixel_peaks(recon: &[DirectionRecon], pixel: usize, run: &RunConfig) -> Vec<PeakList> {
    let t = run.peak_threshold();
    recon.iter().map(|d| find_peaks(&d.functions[pixel], &d.axis, &t)).collect()
}

/// Correspondence candidates for every lit pixel under the configured strategy.
pub fn match_pixels(recon: &[DirectionRecon], rig: &StereoRig, run: &RunConfig) -> Result<Vec<PixelMatches>> {
    let dev = rig.device;
    let params = run.match_params();
    let out: Vec<Option<PixelMatches>> = (0..dev.camera_pixels())
        .into_par_iter()
        .map(|p| {
            if recon.iter().all(|d| d.functions[p].is_empty()) {
                return Ok(None);
            }
            let (u, v) = (p % dev.camera_cols, p / dev.camera_cols);
            let epi = rig.epipolar_line(u as i64, v as i64)?;
            let peaks = pixel_peaks(recon, p, run);
            let matches = match run.strategy {
                Strategy::Ransac4 => ransac_match(&peaks, &epi, &params)?,
                Strategy::Unidirectional => unidirectional_match(&peaks[0], &epi),
                Strategy::Intersect => all_direction_match(&peaks, &epi, &params)?,
            };
            Ok((!matches.is_empty()).then_some(PixelMatches { pixel: (u, v), matches }))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Triangulated cloud and, when configured, its continuity-filtered subset.
pub fn make_cloud(matches: &[PixelMatches], rig: &StereoRig, run: &RunConfig) -> Result<(PointCloud, PointCloud)> {
    let raw = build_cloud(matches, rig);
    let filtered = match run.continuity_params() {
        Some(p) => continuity_filter(&raw, &p)?,
        None => raw.clone(),
    };
    Ok((raw, filtered))
}

/// RMS of the configured surface fit, if any.
pub fn fit_rms(cloud: &PointCloud, fit: FitKind) -> Result<Option<f64>> {
    let pts = cloud.positions();
    Ok(match fit {
        FitKind::None => None,
        FitKind::Plane => Some(fit_plane_rms(&pts)?.1),
        FitKind::Sphere => Some(fit_sphere(&pts)?.1),
    })
}

/// Everything a single run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub stack: IntensityStack,
    pub recon: Vec<DirectionRecon>,
    pub matches: Vec<PixelMatches>,
    pub raw_cloud: PointCloud,
    pub cloud: PointCloud,
}

pub fn run(scene: &RasterizedScene, rig: &StereoRig, run: &RunConfig) -> Result<RunOutput> {
    let stack = capture(scene, run)?;
    analyse(stack, rig, run, run.eta)
}

/// Reconstruction, matching and cloud building on an existing stack.
pub fn analyse(stack: IntensityStack, rig: &StereoRig, run: &RunConfig, eta: f64) -> Result<RunOutput> {
    let recon = reconstruct(&stack, run, eta)?;
    let matches = match_pixels(&recon, rig, run)?;
    let (raw_cloud, cloud) = make_cloud(&matches, rig, run)?;
    Ok(RunOutput { stack, recon, matches, raw_cloud, cloud })
}

/// Total patterns over all directions at ratio `eta`.
pub fn stack_pattern_count(stack: &IntensityStack, run: &RunConfig, eta: f64) -> Result<usize> {
    let mut total = 0;
    for (coarse, fine) in direction_groups(stack)? {
        let b = CaptureBudget {
            coarse_frequencies: coarse.frequencies.len(),
            fine_support: fine.period,
            ratio: eta,
            phase_count: run.phase_count,
            directions: 1,
        };
        total += pattern_count(&b)?.total;
    }
    Ok(total)
}

/// Capture once at full ratio and re-analyse the same stack at every ratio.
///
/// The full-ratio result is the SME reference. A ratio at which the
/// pipeline fails is recorded with its error and the sweep carries on.
pub fn capture_ratio_sweep(scene: &RasterizedScene, rig: &StereoRig, run: &RunConfig, ratios: &[f64], name: &str) -> Result<SweepReport> {
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    if ratios.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio".into()));
    }
    let full = RunConfig { eta: 1.0, ..run.clone() };
    let stack = capture(scene, &full)?;
    let reference = analyse(stack.clone(), rig, &full, 1.0)?;
    let rows = ratios
        .par_iter()
        .map(|&eta| {
            let patterns = stack_pattern_count(&stack, run, eta).unwrap_or(0);
            let res = analyse(stack.clone(), rig, &full, eta).and_then(|out| {
                let (mean, coverage) = compare_clouds(&reference.cloud, &out.cloud);
                let rms = fit_rms(&out.cloud, run.eval.fit).ok().flatten();
                Ok((mean, coverage, rms))
            });
            match res {
                Ok((mean, coverage, rms)) => SweepRow { eta, patterns, mean_sme_px: mean, coverage, rms_mm: rms, error: None },
                Err(e) => {
                    log::warn!("sweep ratio {eta}: {e}");
                    SweepRow { eta, patterns, mean_sme_px: None, coverage: 0.0, rms_mm: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    Ok(SweepReport { scene: name.to_string(), directions: run.directions.clone(), rows })
}
