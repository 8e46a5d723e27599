//! Local-maximum extraction and projector correspondence.
//!
//! Each peak of a projection function back-projects to a line in the
//! projector plane. Correspondences are points where lines from several
//! directions meet (four-direction consensus) or where a single direction's
//! lines cross the epipolar line.

use crate::geometry::{intersect_projection_lines, intersect_with_epipolar, EpipolarLine, Line2D, StereoRig, DEFAULT_RANK_EPS};
use crate::patterns::ProjectionAxis;
use crate::recon::{NoiseThreshold, ProjectionFunction};
use crate::{Error, Result};

/// Reprojection tolerance for peak consensus, projector pixels.
pub const DEFAULT_EPS_R: f64 = 0.5;
/// Epipolar distance tolerance, projector pixels.
pub const DEFAULT_EPS_EPI: f64 = 1.0;
/// Directions (degrees) expected by [`ransac_match`], in tuple order.
pub const RANSAC_DIRECTIONS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    /// Subpixel offset along the direction line, projector pixels.
    pub rho: f64,
    pub amplitude: f64,
}

/// Local maxima of one projection function, increasing in `rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakList {
    pub theta: f64,
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn line(&self, index: usize) -> Line2D {
        Line2D { theta: self.theta, rho: self.peaks[index].rho }
    }

    /// Index of the peak nearest `rho` if within `tolerance`.
    pub fn nearest_within(&self, rho: f64, tolerance: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.peaks.iter().enumerate() {
            let d = (p.rho - rho).abs();
            if d < tolerance && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|b| b.0)
    }
}

/// Subpixel local maxima of the masked projection function.
///
/// Integer maxima (plateaus count once) above the detection level are refined
/// by the intensity-weighted centroid of the contiguous run of samples at
/// least half the peak value.
pub fn find_peaks(f: &ProjectionFunction, axis: &ProjectionAxis, threshold: &NoiseThreshold) -> PeakList {
    let values = f.masked();
    let peaks = find_peak_bins(&values, threshold)
        .into_iter()
        .map(|(bin, amplitude)| Peak { rho: axis.bin_to_rho(bin), amplitude })
        .collect();
    PeakList { theta: f.theta, peaks }
}

/// Peak locations in bin coordinates with their amplitudes.
///
/// A maximum inside the half-height run of a stronger one is a ripple of
/// the same peak and is absorbed by it.
pub fn find_peak_bins(values: &[f64], threshold: &NoiseThreshold) -> Vec<(f64, f64)> {
    let Some(level) = threshold.level(values) else {
        return Vec::new();
    };
    let n = values.len();
    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        let x = values[i];
        let mut e = i;
        while e + 1 < n && values[e + 1] == x {
            e += 1;
        }
        let rises = i == 0 || values[i - 1] < x;
        let falls = e + 1 == n || values[e + 1] < x;
        if x > level && rises && falls {
            maxima.push((i, e, x));
        }
        i = e + 1;
    }
    maxima.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut runs: Vec<(usize, usize, f64)> = Vec::new();
    for (start, end, x) in maxima {
        if runs.iter().any(|&(lo, hi, _)| start >= lo && end <= hi) {
            continue;
        }
        let (lo, hi) = half_height_run(values, start, end);
        runs.push((lo, hi, x));
    }
    runs.sort_by_key(|r| r.0);
    runs.into_iter().map(|(lo, hi, x)| (centroid(values, lo, hi), x)).collect()
}

/// Contiguous run of samples at least half the peak value around a maximum.
fn half_height_run(values: &[f64], start: usize, end: usize) -> (usize, usize) {
    let half = 0.5 * values[start];
    let mut lo = start;
    while lo > 0 && values[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = end;
    while hi + 1 < values.len() && values[hi + 1] >= half {
        hi += 1;
    }
    (lo, hi)
}

fn centroid(values: &[f64], lo: usize, hi: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (n, &v) in values.iter().enumerate().take(hi + 1).skip(lo) {
        num += n as f64 * v;
        den += v;
    }
    num / den
}

/// Thresholds shared by every matcher.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub eps_r: f64,
    pub eps_epi: f64,
    pub rank_eps: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { eps_r: DEFAULT_EPS_R, eps_epi: DEFAULT_EPS_EPI, rank_eps: DEFAULT_RANK_EPS }
    }
}

/// Peak indices per direction; `-1` marks an excluded direction.
pub type PeakTuple = Vec<i32>;

/// A projector-plane correspondence for one camera pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateMatch {
    pub projector: (f64, f64),
    pub tuple: PeakTuple,
    /// Distance to the camera pixel's epipolar line, projector pixels.
    pub epipolar_residual: f64,
    /// Number of directions contributing to the point.
    pub consensus: usize,
}

fn check_directions(peaks: &[PeakList], wanted: &[f64]) -> Result<()> {
    if peaks.len() != wanted.len() {
        return Err(Error::Contract(format!("expected {} directions, got {}", wanted.len(), peaks.len())));
    }
    for (p, &deg) in peaks.iter().zip(wanted) {
        if (p.theta.to_degrees() - deg).abs() > 1e-9 {
            return Err(Error::Contract(format!("expected direction {deg} deg, got {} deg", p.theta.to_degrees())));
        }
    }
    Ok(())
}

fn project(theta: f64, (u, v): (f64, f64)) -> f64 {
    u * theta.cos() + v * theta.sin()
}

/// Four-direction consensus matching.
///
/// Every pair of directions and every pair of their peaks is intersected.
/// Intersections passing the epipolar check are projected into the two
/// remaining directions; a direction whose nearest peak lies beyond
/// `eps_r` is marked `-1` and left out, which is how a peak mixed from two
/// speckles gets excluded. Tuples with both remaining directions excluded
/// are dropped, duplicates are dropped, and each surviving tuple is solved
/// by least squares over its valid directions.
pub fn ransac_match(peaks: &[PeakList], epipolar: &EpipolarLine, params: &MatchParams) -> Result<Vec<CandidateMatch>> {
    check_directions(peaks, &RANSAC_DIRECTIONS_DEG)?;
    let mut tuples: Vec<[i32; 4]> = Vec::new();
    for d1 in 0..4 {
        for d2 in d1 + 1..4 {
            let others: Vec<usize> = (0..4).filter(|&d| d != d1 && d != d2).collect();
            for i in 0..peaks[d1].len() {
                for j in 0..peaks[d2].len() {
                    let Some(p) = intersect_pair(&peaks[d1].line(i), &peaks[d2].line(j)) else {
                        continue;
                    };
                    if epipolar.distance(p.0, p.1) > params.eps_epi {
                        continue;
                    }
                    let mut t = [-1i32; 4];
                    t[d1] = i as i32;
                    t[d2] = j as i32;
                    for &d in &others {
                        if let Some(k) = peaks[d].nearest_within(project(peaks[d].theta, p), params.eps_r) {
                            t[d] = k as i32;
                        }
                    }
                    if others.iter().all(|&d| t[d] < 0) {
                        continue;
                    }
                    if !tuples.contains(&t) {
                        tuples.push(t);
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for t in tuples {
        if let Some(m) = solve_tuple(peaks, &t, epipolar, params)? {
            out.push(m);
        }
    }
    Ok(out)
}

fn intersect_pair(a: &Line2D, b: &Line2D) -> Option<(f64, f64)> {
    intersect_projection_lines(&[*a, *b], DEFAULT_RANK_EPS).ok().flatten()
}

fn solve_tuple(peaks: &[PeakList], tuple: &[i32], epipolar: &EpipolarLine, params: &MatchParams) -> Result<Option<CandidateMatch>> {
    let lines: Vec<Line2D> =
        tuple.iter().enumerate().filter(|(_, &t)| t >= 0).map(|(d, &t)| peaks[d].line(t as usize)).collect();
    let Some(p) = intersect_projection_lines(&lines, params.rank_eps)? else {
        return Ok(None);
    };
    if lines.iter().any(|l| (project(l.theta, p) - l.rho).abs() > params.eps_r) {
        return Ok(None);
    }
    let residual = epipolar.distance(p.0, p.1);
    if residual > params.eps_epi {
        return Ok(None);
    }
    Ok(Some(CandidateMatch { projector: p, tuple: tuple.to_vec(), epipolar_residual: residual, consensus: lines.len() }))
}

/// Plain intersection of one peak from every direction (no exclusion).
///
/// Used for three-direction capture and as the naive baseline: a mixed peak
/// pulls the point off the true correspondence.
pub fn all_direction_match(peaks: &[PeakList], epipolar: &EpipolarLine, params: &MatchParams) -> Result<Vec<CandidateMatch>> {
    if peaks.len() < 2 {
        return Err(Error::Contract(format!("need at least 2 directions, got {}", peaks.len())));
    }
    if peaks.iter().any(PeakList::is_empty) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; peaks.len()];
    loop {
        let tuple: Vec<i32> = idx.iter().map(|&i| i as i32).collect();
        if let Some(m) = solve_tuple(peaks, &tuple, epipolar, params)? {
            out.push(m);
        }
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < peaks[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == peaks.len() {
                return Ok(out);
            }
        }
    }
}

/// One candidate per peak: its projection line crossed with the epipolar line.
pub fn unidirectional_match(peaks: &PeakList, epipolar: &EpipolarLine) -> Vec<CandidateMatch> {
    peaks
        .peaks
        .iter()
        .enumerate()
        .filter_map(|(i, _)| match intersect_with_epipolar(&peaks.line(i), epipolar) {
            Some(p) => Some(CandidateMatch { projector: p, tuple: vec![i as i32], epipolar_residual: epipolar.distance(p.0, p.1), consensus: 1 }),
            None => {
                log::debug!("peak {i} projection line parallel to the epipolar line");
                None
            }
        })
        .collect()
}

/// Keep candidates within `eps_epi` of the camera pixel's epipolar line.
pub fn epipolar_filter(candidates: Vec<CandidateMatch>, rig: &StereoRig, camera_pixel: (i64, i64), eps_epi: f64) -> Result<Vec<CandidateMatch>> {
    let line = rig.epipolar_line(camera_pixel.0, camera_pixel.1)?;
    Ok(candidates
        .into_iter()
        .filter_map(|mut c| {
            let d = line.distance(c.projector.0, c.projector.1);
            c.epipolar_residual = d;
            (d <= eps_epi).then_some(c)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DeviceSpec, Intrinsics};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn pf(values: Vec<f64>) -> ProjectionFunction {
        let n = values.len();
        ProjectionFunction { theta: 0.0, values, mask: vec![true; n], support: n, scale: 1.0, aliased: false }
    }

    fn axis0(len: usize) -> ProjectionAxis {
        ProjectionAxis { theta: 0.0, length: len, offset: 0 }
    }

    fn list(theta: f64, rhos: &[f64]) -> PeakList {
        PeakList { theta, peaks: rhos.iter().map(|&rho| Peak { rho, amplitude: 1.0 }).collect() }
    }

    fn horizontal(v: f64) -> EpipolarLine {
        EpipolarLine::new(0.0, 1.0, -v).unwrap()
    }

    #[test]
    fn triangle_between_bins() {
        let mut v = vec![0.0; 100];
        for (i, x) in [(48, 0.2), (49, 0.6), (50, 1.0), (51, 1.0), (52, 0.6), (53, 0.2)] {
            v[i] = x;
        }
        let p = find_peaks(&pf(v), &axis0(100), &NoiseThreshold::default());
        assert_eq!(p.len(), 1);
        assert!((p.peaks[0].rho - 50.5).abs() < 1e-12);
    }

    #[test]
    fn flat_zero_has_no_peaks() {
        assert!(find_peaks(&pf(vec![0.0; 64]), &axis0(64), &NoiseThreshold::default()).is_empty());
    }

    #[test]
    fn peaks_are_increasing_and_masked() {
        let mut v = vec![0.0; 64];
        v[10] = 1.0;
        v[30] = 0.5;
        v[50] = 2.0;
        let mut f = pf(v);
        f.mask[30] = false;
        let p = find_peaks(&f, &axis0(64), &NoiseThreshold::default());
        let rhos: Vec<f64> = p.peaks.iter().map(|q| q.rho).collect();
        assert_eq!(rhos, vec![10.0, 50.0]);
    }

    #[test]
    fn peak_rho_removes_offset() {
        let mut v = vec![0.0; 64];
        v[40] = 1.0;
        let axis = ProjectionAxis { theta: 2.0, length: 64, offset: 25 };
        let p = find_peaks(&pf(v), &axis, &NoiseThreshold::default());
        assert_eq!(p.peaks[0].rho, 15.0);
    }

    #[test]
    fn nearest_peak_respects_tolerance() {
        let l = list(0.0, &[10.0, 10.6, 20.0]);
        assert_eq!(l.nearest_within(10.4, 0.5), Some(1));
        assert_eq!(l.nearest_within(15.0, 0.5), None);
    }

    fn four(u: f64, v: f64) -> Vec<PeakList> {
        RANSAC_DIRECTIONS_DEG
            .iter()
            .map(|d| {
                let t = d.to_radians();
                list(t, &[u * t.cos() + v * t.sin()])
            })
            .collect()
    }

    #[test]
    fn single_point_gives_one_full_consensus_match() {
        let m = ransac_match(&four(300.0, 400.0), &horizontal(400.0), &MatchParams::default()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].consensus, 4);
        assert_eq!(m[0].tuple, vec![0, 0, 0, 0]);
        assert!((m[0].projector.0 - 300.0).abs() < 1e-9 && (m[0].projector.1 - 400.0).abs() < 1e-9);
    }

    #[test]
    fn mixed_direction_is_excluded() {
        let mut p = four(300.0, 400.0);
        p[2].peaks[0].rho += 1.5;
        let m = ransac_match(&p, &horizontal(400.0), &MatchParams::default()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].tuple, vec![0, 0, -1, 0]);
        assert!((m[0].projector.1 - 400.0).abs() < 1e-9);
        let naive = all_direction_match(&p, &horizontal(400.0), &MatchParams { eps_r: 10.0, eps_epi: 10.0, rank_eps: 1.0 }).unwrap();
        assert!((naive[0].projector.1 - 400.75).abs() < 1e-9);
    }

    #[test]
    fn off_epipolar_points_are_rejected() {
        let m = ransac_match(&four(300.0, 403.0), &horizontal(400.0), &MatchParams::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn ransac_needs_four_directions() {
        let p = four(1.0, 2.0);
        assert!(matches!(ransac_match(&p[..3], &horizontal(2.0), &MatchParams::default()), Err(Error::Contract(_))));
        let mut q = p.clone();
        q[1].theta = 0.5;
        assert!(matches!(ransac_match(&q, &horizontal(2.0), &MatchParams::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn unidirectional_examples() {
        let m = unidirectional_match(&list(0.0, &[500.0]), &horizontal(600.0));
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].projector, (500.0, 600.0));
        assert_eq!(unidirectional_match(&list(0.0, &[10.0, 90.0]), &horizontal(5.0)).len(), 2);
        assert!(unidirectional_match(&list(FRAC_PI_2, &[10.0]), &horizontal(5.0)).is_empty());
    }

    fn rig() -> StereoRig {
        let dev = DeviceSpec::new(256, 256, 64, 64).unwrap();
        StereoRig::new(dev, Intrinsics { focal_px: 200.0, cx: 32.0, cy: 32.0 }, Intrinsics { focal_px: 200.0, cx: 128.0, cy: 128.0 }, 100.0).unwrap()
    }

    #[test]
    fn epipolar_filter_examples() {
        let r = rig();
        let line = r.epipolar_line(10, 20).unwrap();
        let v = -line.c / line.b;
        let c = |v: f64| CandidateMatch { projector: (50.0, v), tuple: vec![0], epipolar_residual: 0.0, consensus: 1 };
        let kept = epipolar_filter(vec![c(v), c(v + 5.0)], &r, (10, 20), 1.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].projector.1, v);
    }

    #[test]
    fn forward_projected_truths_survive_filter() {
        let r = rig();
        for (u, v, z) in [(10, 20, 500.0), (40, 5, 420.0), (63, 63, 610.0)] {
            let ray = r.camera_ray(u as f64, v as f64);
            let x = nalgebra::Point3::from(ray * (z / ray.z));
            let p = r.project_to_projector(&x).unwrap();
            let c = CandidateMatch { projector: p, tuple: vec![0], epipolar_residual: 0.0, consensus: 1 };
            assert_eq!(epipolar_filter(vec![c], &r, (u, v), 1.0).unwrap().len(), 1);
        }
    }

    #[test]
    fn ransac_is_deterministic_and_deduplicated() {
        let mut p = four(120.0, 80.0);
        for d in 0..4 {
            let t = p[d].theta;
            p[d].peaks.push(Peak { rho: 160.0 * t.cos() + 80.0 * t.sin() + 0.1, amplitude: 0.5 });
            p[d].peaks.sort_by(|a, b| a.rho.total_cmp(&b.rho));
        }
        let a = ransac_match(&p, &horizontal(80.0), &MatchParams::default()).unwrap();
        let b = ransac_match(&p, &horizontal(80.0), &MatchParams::default()).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i].tuple, a[j].tuple);
            }
        }
        assert!(a.len() >= 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn accepted_matches_reproject_within_tolerance(
                pts in proptest::collection::vec((20.0..230.0f64, -0.8..0.8f64), 1..4),
                jitter in proptest::collection::vec(-0.6..0.6f64, 16)) {
                let v0 = 128.0;
                let mut p: Vec<PeakList> = RANSAC_DIRECTIONS_DEG.iter().map(|d| list(d.to_radians(), &[])).collect();
                for (n, &(u, dv)) in pts.iter().enumerate() {
                    for d in 0..4 {
                        let t = p[d].theta;
                        let rho = u * t.cos() + (v0 + dv) * t.sin() + jitter[(n * 4 + d) % 16];
                        p[d].peaks.push(Peak { rho, amplitude: 1.0 });
                    }
                }
                for l in &mut p { l.peaks.sort_by(|a, b| a.rho.total_cmp(&b.rho)); }
                let params = MatchParams::default();
                let m = ransac_match(&p, &horizontal(v0), &params).unwrap();
                for c in &m {
                    prop_assert!(c.consensus >= 3);
                    prop_assert!(c.epipolar_residual <= params.eps_epi);
                    for (d, &t) in c.tuple.iter().enumerate() {
                        if t >= 0 {
                            let l = p[d].line(t as usize);
                            prop_assert!((project(l.theta, c.projector) - l.rho).abs() <= params.eps_r);
                        }
                    }
                }
            }

            #[test]
            fn unidirectional_count_equals_peaks(rhos in proptest::collection::vec(0.0..255.0f64, 0..10), v in 0.0..255.0f64) {
                let mut r = rhos.clone();
                r.sort_by(f64::total_cmp);
                prop_assert_eq!(unidirectional_match(&list(0.0, &r), &horizontal(v)).len(), r.len());
            }

            #[test]
            fn symmetric_lobe_centroid_is_exact(c in 20.0..80.0f64, s in 1.0..4.0f64) {
                let c = (c * 2.0).round() / 2.0;
                let v: Vec<f64> = (0..100).map(|n| (-(n as f64 - c).powi(2) / (2.0 * s * s)).exp()).collect();
                let p = find_peaks(&pf(v), &axis0(100), &NoiseThreshold::default());
                prop_assert_eq!(p.len(), 1);
                prop_assert!((p.peaks[0].rho - c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn diagonal_pair_intersection() {
        let a = Line2D { theta: FRAC_PI_4, rho: 100.0 * 2f64.sqrt() };
        let b = Line2D { theta: 3.0 * FRAC_PI_4, rho: 0.0 };
        let p = intersect_pair(&a, &b).unwrap();
        assert!((p.0 - 100.0).abs() < 1e-9 && (p.1 - 100.0).abs() < 1e-9);
    }
}
