//! Matching error, spectral energy distribution and sweep reports.

use std::collections::HashMap;

use rustfft::num_complex::Complex64;

use crate::pointcloud::PointCloud;
use crate::{Error, Result};

/// Half the squared distance between two projector points.
pub fn sme(reference: (f64, f64), test: (f64, f64)) -> f64 {
    0.5 * ((reference.0 - test.0).powi(2) + (reference.1 - test.1).powi(2))
}

/// Mean SME of `test` against `reference` and the coverage fraction.
///
/// Each reference point is paired with the nearest test point of the same
/// camera pixel in projector coordinates; the mean runs over paired points
/// and coverage is the paired share of the reference.
pub fn compare_clouds(reference: &PointCloud, test: &PointCloud) -> (Option<f64>, f64) {
    let mut by_pixel: HashMap<(usize, usize), Vec<(f64, f64)>> = HashMap::new();
    for p in &test.points {
        by_pixel.entry(p.pixel).or_default().push(p.projector);
    }
    let (mut sum, mut matched) = (0.0, 0usize);
    for r in &reference.points {
        if let Some(t) = by_pixel.get(&r.pixel) {
            sum += t.iter().map(|&q| sme(r.projector, q)).fold(f64::INFINITY, f64::min);
            matched += 1;
        }
    }
    let coverage = if reference.is_empty() { 0.0 } else { matched as f64 / reference.len() as f64 };
    ((matched > 0).then(|| sum / matched as f64), coverage)
}

/// RMS distance, mm, from each test point to its nearest reference point.
pub fn nearest_rms(test: &PointCloud, reference: &PointCloud) -> Option<f64> {
    if test.is_empty() || reference.is_empty() {
        return None;
    }
    let refs = reference.positions();
    let sum: f64 = test
        .points
        .iter()
        .map(|p| refs.iter().map(|q| (p.position - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum();
    Some((sum / test.len() as f64).sqrt())
}

/// Normalised energy distribution over `k = 1 .. floor(period/2) - 1`.
///
/// Each entry is the mean spectral magnitude at that frequency over all
/// pixels, divided by the largest entry. `spectra[p][k]` is pixel `p`'s
/// coefficient at frequency `k`; every row needs at least `floor(period/2)`
/// entries.
pub fn ned(spectra: &[Vec<Complex64>], period: usize) -> Result<Vec<f64>> {
    let top = period / 2;
    if top < 2 {
        return Err(Error::Domain(format!("period {period} leaves no frequencies to analyse")));
    }
    if let Some(row) = spectra.iter().find(|r| r.len() < top) {
        return Err(Error::DimensionMismatch { expected: format!(">= {top} coefficients"), got: format!("{}", row.len()) });
    }
    let n = spectra.len().max(1) as f64;
    let energy: Vec<f64> = (1..top).map(|k| spectra.iter().map(|r| r[k].norm()).sum::<f64>() / n).collect();
    let max = energy.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::ZeroNormalization);
    }
    Ok(energy.into_iter().map(|e| e / max).collect())
}

/// Share of the distribution carried by the lowest `ratio` of the band.
///
/// The band holds `round(ratio * (floor(period/2) + 1))` frequencies, the
/// same count a capture at that ratio retains.
pub fn band_fraction(ned: &[f64], period: usize, ratio: f64) -> f64 {
    let count = ((ratio * (period / 2 + 1) as f64).round() as usize).min(ned.len());
    let total: f64 = ned.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    ned[..count].iter().sum::<f64>() / total
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DimensionMismatch { expected: "two equal series of length >= 2".into(), got: format!("{} and {}", x.len(), y.len()) });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("constant series has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Knee of a decreasing curve: the sample farthest below the chord joining
/// its end points after scaling both axes to `[0, 1]`.
pub fn knee(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::DimensionMismatch { expected: "two equal series of length >= 3".into(), got: format!("{} and {}", x.len(), y.len()) });
    }
    let (x0, x1) = (x[0], x[x.len() - 1]);
    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if x1 == x0 || ymax == ymin {
        return Err(Error::Domain("flat curve has no knee".into()));
    }
    let yn = |v: f64| (v - ymin) / (ymax - ymin);
    let (ya, yb) = (yn(y[0]), yn(y[y.len() - 1]));
    let mut best = (x[0], f64::NEG_INFINITY);
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - x0) / (x1 - x0);
        let chord = ya + t * (yb - ya);
        let gap = chord - yn(yi);
        if gap > best.1 {
            best = (xi, gap);
        }
    }
    Ok(best.0)
}

/// One capture ratio of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    /// Patterns per direction times directions.
    pub patterns: usize,
    /// `None` when the pipeline failed at this ratio.
    pub mean_sme_px: Option<f64>,
    pub coverage: f64,
    pub rms_mm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub scene: String,
    pub directions: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "eta,patterns,mean_sme_px,coverage,rms_mm";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&csv_row(r.eta, r.patterns, r.mean_sme_px, Some(r.coverage), r.rms_mm));
            s.push('\n');
        }
        s
    }

    /// Ratios and mean SME of the rows that succeeded.
    pub fn curve(&self) -> (Vec<f64>, Vec<f64>) {
        self.rows.iter().filter_map(|r| r.mean_sme_px.map(|s| (r.eta, s))).unzip()
    }
}

/// One metrics CSV line; missing values are left empty.
pub fn csv_row(eta: f64, patterns: usize, sme: Option<f64>, coverage: Option<f64>, rms: Option<f64>) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    format!("{eta},{patterns},{},{},{}", opt(sme), opt(coverage), opt(rms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sme_examples() {
        assert_eq!(sme((3.0, 4.0), (3.0, 4.0)), 0.0);
        assert_eq!(sme((0.0, 0.0), (1.0, 1.0)), 1.0);
        assert_eq!(sme((2.0, 0.0), (0.0, 0.0)), 2.0);
    }

    fn dft(f: &[f64]) -> Vec<Complex64> {
        let n = f.len();
        (0..n)
            .map(|k| {
                f.iter().enumerate().fold(Complex64::new(0.0, 0.0), |a, (j, &x)| {
                    let ph = -2.0 * PI * (k * j % n) as f64 / n as f64;
                    a + Complex64::new(x * ph.cos(), x * ph.sin())
                })
            })
            .collect()
    }

    #[test]
    fn impulse_ned_is_flat() {
        let mut f = vec![0.0; 64];
        f[17] = 2.0;
        let e = ned(&[dft(&f)], 64).unwrap();
        assert_eq!(e.len(), 31);
        assert!(e.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ned_rejects_zero_spectra() {
        assert!(matches!(ned(&[vec![Complex64::new(0.0, 0.0); 16]], 16), Err(Error::ZeroNormalization)));
        assert!(ned(&[vec![Complex64::new(1.0, 0.0); 3]], 16).is_err());
    }

    #[test]
    fn wide_lobe_concentrates_low_band() {
        let w = 8.0;
        let f: Vec<f64> = (0..96).map(|n| (-(n as f64 - 48.0).powi(2) / (2.0 * w * w)).exp()).collect();
        let e = ned(&[dft(&f)], 96).unwrap();
        assert_eq!(e.iter().cloned().fold(0.0, f64::max), 1.0);
        assert!(band_fraction(&e, 96, 0.16) > 0.9);
        let g: Vec<f64> = (0..96).map(|n| (-(n as f64 - 48.0).powi(2) / 2.0).exp()).collect();
        let e2 = ned(&[dft(&g)], 96).unwrap();
        assert!(band_fraction(&e2, 96, 0.16) < band_fraction(&e, 96, 0.16));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 8.0, 3.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        // Ties share the average rank.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.948_683_298_050_513_8).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn knee_of_elbow_curve() {
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];
        let y = [8.0, 4.0, 1.0, 0.6, 0.4, 0.3, 0.1, 0.0];
        assert_eq!(knee(&x, &y).unwrap(), 0.3);
        assert!(knee(&x[..2], &y[..2]).is_err());
        assert!(knee(&x, &[1.0; 8]).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = SweepReport {
            scene: "s".into(),
            directions: vec![0.0],
            rows: vec![
                SweepRow { eta: 0.25, patterns: 84, mean_sme_px: Some(0.5), coverage: 1.0, rms_mm: Some(0.01), error: None },
                SweepRow { eta: 0.05, patterns: 36, mean_sme_px: None, coverage: 0.0, rms_mm: None, error: Some("x".into()) },
            ],
        };
        assert_eq!(r.to_csv(), "eta,patterns,mean_sme_px,coverage,rms_mm\n0.25,84,0.5,1,0.01\n0.05,36,,0,\n");
        assert_eq!(r.curve(), (vec![0.25], vec![0.5]));
    }

    fn point(pixel: (usize, usize), projector: (f64, f64), z: f64) -> crate::pointcloud::CloudPoint {
        crate::pointcloud::CloudPoint { position: nalgebra::Point3::new(0.0, 0.0, z), pixel, candidate: 0, projector, consensus: 1 }
    }

    #[test]
    fn cloud_comparison_pairs_by_pixel() {
        let r = PointCloud { points: vec![point((0, 0), (1.0, 1.0), 1.0), point((1, 0), (5.0, 5.0), 2.0), point((2, 0), (0.0, 0.0), 3.0)] };
        let t = PointCloud { points: vec![point((0, 0), (1.0, 2.0), 1.0), point((0, 0), (9.0, 9.0), 1.0), point((1, 0), (5.0, 5.0), 2.0)] };
        let (m, c) = compare_clouds(&r, &t);
        assert_eq!(m, Some(0.25));
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(compare_clouds(&r, &r), (Some(0.0), 1.0));
        assert_eq!(compare_clouds(&r, &PointCloud::default()), (None, 0.0));
        assert_eq!(nearest_rms(&r, &r), Some(0.0));
        assert_eq!(nearest_rms(&PointCloud { points: vec![point((0, 0), (0.0, 0.0), 5.0)] }, &r), Some(2.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sme_symmetric_nonnegative(a in -1e3..1e3f64, b in -1e3..1e3f64, c in -1e3..1e3f64, d in -1e3..1e3f64) {
                let s = sme((a, b), (c, d));
                prop_assert_eq!(s, sme((c, d), (a, b)));
                prop_assert!(s >= 0.0);
                prop_assert_eq!(s == 0.0, a == c && b == d);
            }

            #[test]
            fn ned_in_unit_interval(vals in proptest::collection::vec(0.0..1.0f64, 8..64)) {
                prop_assume!(vals.iter().any(|&v| v > 1e-3));
                let n = vals.len();
                if let Ok(e) = ned(&[dft(&vals)], n) {
                    prop_assert!(e.iter().all(|&x| (0.0..=1.0).contains(&x)));
                    prop_assert_eq!(e.iter().cloned().fold(0.0, f64::max), 1.0);
                }
            }
        }
    }
}
