//! Synthetic light transport.
//!
//! Every camera pixel owns a pixel transport image (PTI): a non-negative map
//! over the projector raster saying how much of each projector pixel's light
//! reaches it. The scene model builds PTIs from Gaussian lobes (one direct
//! lobe plus any number of inter-reflection speckles), optionally blurred by
//! an isotropic subsurface kernel. Forward rendering is the plain inner
//! product of the PTI with a pattern; the Radon oracle bins the PTI along a
//! direction and is the ground truth every reconstruction is checked against.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geometry::DeviceSpec;
use crate::patterns::{pattern_profile, PatternImage, PatternSpec, ProjectionAxis};
use crate::{Error, Result};

/// Lobes are truncated at this many standard deviations.
pub const LOBE_TRUNCATION: f64 = 4.0;

/// Isotropic Gaussian lobe in projector coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lobe {
    pub u: f64,
    pub v: f64,
    pub amplitude: f64,
    /// Standard deviation, projector pixels.
    pub radius: f64,
}

impl Lobe {
    pub fn new(u: f64, v: f64, amplitude: f64, radius: f64) -> Self {
        Lobe { u, v, amplitude, radius }
    }

    fn reach(&self) -> f64 {
        LOBE_TRUNCATION * self.radius
    }

    fn value(&self, u: f64, v: f64) -> f64 {
        let d2 = (u - self.u).powi(2) + (v - self.v).powi(2);
        let r = self.reach();
        if d2 > r * r {
            return 0.0;
        }
        self.amplitude * (-d2 / (2.0 * self.radius * self.radius)).exp()
    }
}

/// Light-transport description of one camera pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelLtc {
    pub direct: Option<Lobe>,
    pub speckles: Vec<Lobe>,
    /// Subsurface kernel standard deviation; overrides the scene default.
    pub subsurface: Option<f64>,
}

impl PixelLtc {
    pub fn direct(lobe: Lobe) -> Self {
        PixelLtc { direct: Some(lobe), ..Default::default() }
    }

    pub fn with_speckle(mut self, lobe: Lobe) -> Self {
        self.speckles.push(lobe);
        self
    }

    pub fn lobes(&self) -> impl Iterator<Item = &Lobe> {
        self.direct.iter().chain(self.speckles.iter())
    }

    pub fn is_dark(&self) -> bool {
        self.lobes().all(|l| l.amplitude == 0.0)
    }
}

/// Per-camera-pixel light transport plus ambient level.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub device: DeviceSpec,
    /// Ambient radiance `O(u, v)`, row-major over the camera.
    pub ambient: Vec<f64>,
    pub pixels: Vec<PixelLtc>,
    pub subsurface: Option<f64>,
}

impl SceneModel {
    /// Dark scene with uniform ambient light.
    pub fn new(device: DeviceSpec, ambient: f64) -> Self {
        let n = device.camera_pixels();
        SceneModel { device, ambient: vec![ambient; n], pixels: vec![PixelLtc::default(); n], subsurface: None }
    }

    pub fn pixel_index(&self, u: usize, v: usize) -> usize {
        v * self.device.camera_cols + u
    }

    pub fn pixel_coords(&self, index: usize) -> (usize, usize) {
        (index % self.device.camera_cols, index / self.device.camera_cols)
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, ltc: PixelLtc) {
        let i = self.pixel_index(u, v);
        self.pixels[i] = ltc;
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        let n = self.device.camera_pixels();
        if self.pixels.len() != n || self.ambient.len() != n {
            return Err(Error::DimensionMismatch { expected: format!("{n} camera pixels"), got: format!("{}", self.pixels.len()) });
        }
        if self.ambient.iter().any(|&o| !(o >= 0.0)) {
            return Err(Error::Domain("ambient must be >= 0".into()));
        }
        for p in &self.pixels {
            for l in p.lobes() {
                if !(l.amplitude >= 0.0 && l.radius > 0.0 && l.u.is_finite() && l.v.is_finite()) {
                    return Err(Error::Domain(format!("invalid lobe {l:?}")));
                }
            }
            if let Some(w) = p.subsurface.or(self.subsurface) {
                if !(w >= 0.0) {
                    return Err(Error::Domain("subsurface width must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rasterize(&self) -> Result<RasterizedScene> {
        self.validate()?;
        let ptis = (0..self.pixels.len()).into_par_iter().map(|i| self.rasterize_index(i)).collect();
        Ok(RasterizedScene { device: self.device, ambient: self.ambient.clone(), ptis })
    }

    fn rasterize_index(&self, index: usize) -> PixelTransportImage {
        let ltc = &self.pixels[index];
        let dev = &self.device;
        let width = ltc.subsurface.or(self.subsurface).filter(|&w| w > 0.0);
        let kernel_reach = width.map_or(0, |w| (LOBE_TRUNCATION * w).ceil() as i64);

        let mut bounds: Option<(i64, i64, i64, i64)> = None;
        for l in ltc.lobes().filter(|l| l.amplitude > 0.0) {
            let r = l.reach();
            let b = ((l.u - r).floor() as i64, (l.v - r).floor() as i64, (l.u + r).ceil() as i64, (l.v + r).ceil() as i64);
            bounds = Some(match bounds {
                None => b,
                Some(a) => (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
            });
        }
        let Some((u0, v0, u1, v1)) = bounds else {
            return PixelTransportImage::empty(*dev);
        };
        let clip_u = |x: i64| x.clamp(0, dev.projector_cols as i64 - 1);
        let clip_v = |x: i64| x.clamp(0, dev.projector_rows as i64 - 1);
        let (cu0, cv0) = (clip_u(u0 - kernel_reach), clip_v(v0 - kernel_reach));
        let (cu1, cv1) = (clip_u(u1 + kernel_reach), clip_v(v1 + kernel_reach));
        if u1 < 0 || v1 < 0 || u0 >= dev.projector_cols as i64 || v0 >= dev.projector_rows as i64 {
            return PixelTransportImage::empty(*dev);
        }
        let cols = (cu1 - cu0 + 1) as usize;
        let rows = (cv1 - cv0 + 1) as usize;
        let mut data = vec![0.0; cols * rows];
        for l in ltc.lobes().filter(|l| l.amplitude > 0.0) {
            let r = l.reach();
            let lu0 = ((l.u - r).floor() as i64).max(cu0);
            let lu1 = ((l.u + r).ceil() as i64).min(cu1);
            let lv0 = ((l.v - r).floor() as i64).max(cv0);
            let lv1 = ((l.v + r).ceil() as i64).min(cv1);
            for v in lv0..=lv1 {
                for u in lu0..=lu1 {
                    data[(v - cv0) as usize * cols + (u - cu0) as usize] += l.value(u as f64, v as f64);
                }
            }
        }
        if let Some(w) = width {
            data = gaussian_blur(&data, cols, rows, w);
        }
        PixelTransportImage { device: *dev, col0: cu0 as usize, row0: cv0 as usize, cols, rows, data }
    }
}

/// Separable truncated Gaussian blur with a unit-sum kernel, zero outside.
fn gaussian_blur(data: &[f64], cols: usize, rows: usize, sigma: f64) -> Vec<f64> {
    let reach = (LOBE_TRUNCATION * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-reach..=reach).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);

    let mut tmp = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let cc = c as i64 + j as i64 - reach;
                if cc >= 0 && (cc as usize) < cols {
                    acc += k * data[r * cols + cc as usize];
                }
            }
            tmp[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let rr = r as i64 + j as i64 - reach;
                if rr >= 0 && (rr as usize) < rows {
                    acc += k * tmp[rr as usize * cols + c];
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Non-negative projector-resolution map of one camera pixel, stored as the
/// bounding patch of its non-zero region.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTransportImage {
    pub device: DeviceSpec,
    pub col0: usize,
    pub row0: usize,
    pub cols: usize,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl PixelTransportImage {
    pub fn empty(device: DeviceSpec) -> Self {
        PixelTransportImage { device, col0: 0, row0: 0, cols: 0, rows: 0, data: Vec::new() }
    }

    /// Patch from a dense full-raster image.
    pub fn from_dense(device: DeviceSpec, dense: &[f64]) -> Result<Self> {
        if dense.len() != device.projector_pixels() {
            return Err(Error::DimensionMismatch { expected: format!("{}", device.projector_pixels()), got: format!("{}", dense.len()) });
        }
        Ok(PixelTransportImage { device, col0: 0, row0: 0, cols: device.projector_cols, rows: device.projector_rows, data: dense.to_vec() })
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        if u < self.col0 || v < self.row0 || u >= self.col0 + self.cols || v >= self.row0 + self.rows {
            return 0.0;
        }
        self.data[(v - self.row0) * self.cols + (u - self.col0)]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.device.projector_pixels()];
        for (u, v, h) in self.iter() {
            out[v * self.device.projector_cols + u] = h;
        }
        out
    }

    /// Row-major iterator over `(u', v', h)` for the stored patch.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data.iter().enumerate().map(move |(i, &h)| (self.col0 + i % self.cols.max(1), self.row0 + i / self.cols.max(1), h))
    }

    /// Location of the largest sample.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        self.iter().filter(|t| t.2 > 0.0).max_by(|a, b| a.2.total_cmp(&b.2)).map(|(u, v, _)| (u, v))
    }
}

/// Scene with every PTI rasterised once.
#[derive(Clone, Debug)]
pub struct RasterizedScene {
    pub device: DeviceSpec,
    pub ambient: Vec<f64>,
    pub ptis: Vec<PixelTransportImage>,
}

/// Rasterise the PTI of one camera pixel.
pub fn rasterize_ltc(scene: &SceneModel, camera_pixel: (usize, usize)) -> Result<PixelTransportImage> {
    let (u, v) = camera_pixel;
    scene.device.check_camera_pixel(u as i64, v as i64)?;
    Ok(scene.rasterize_index(scene.pixel_index(u, v)))
}

/// Camera image under one projector pattern: `O + sum h * P` per pixel.
pub fn render_intensity(scene: &RasterizedScene, pattern: &PatternImage) -> Result<Vec<f64>> {
    let dev = &scene.device;
    if pattern.cols != dev.projector_cols || pattern.rows != dev.projector_rows {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", dev.projector_cols, dev.projector_rows),
            got: format!("{}x{}", pattern.cols, pattern.rows),
        });
    }
    Ok(scene
        .ptis
        .iter()
        .zip(&scene.ambient)
        .map(|(pti, &o)| {
            let mut acc = 0.0;
            for (u, v, h) in pti.iter() {
                if h != 0.0 {
                    acc += h * pattern.get(u, v);
                }
            }
            o + acc
        })
        .collect())
}

/// Ground-truth projection function: PTI mass binned along `axis`.
pub fn radon_oracle(pti: &PixelTransportImage, axis: &ProjectionAxis) -> Vec<f64> {
    let mut f = vec![0.0; axis.length];
    for (u, v, h) in pti.iter() {
        if h != 0.0 {
            let b = axis.bin(u as f64, v as f64);
            f[b as usize] += h;
        }
    }
    f
}

/// Role of a group of frequencies inside an intensity stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    /// Low frequencies over `L_theta` for coarse localisation.
    Coarse,
    /// Frequencies over the fine period `M_theta`.
    Fine,
    /// Arbitrary frequency set over `L_theta` (oracle-style full capture).
    Full,
}

impl GroupKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupKind::Coarse => "coarse",
            GroupKind::Fine => "fine",
            GroupKind::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coarse" => Some(GroupKind::Coarse),
            "fine" => Some(GroupKind::Fine),
            "full" => Some(GroupKind::Full),
            _ => None,
        }
    }
}

/// Captured images for one pattern family, laid out `[frequency][phase][pixel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackGroup {
    pub direction: usize,
    pub axis: ProjectionAxis,
    pub kind: GroupKind,
    pub period: usize,
    pub frequencies: Vec<usize>,
    pub phase_count: usize,
    pub data: Vec<f64>,
}

impl StackGroup {
    pub fn pattern_count(&self) -> usize {
        self.frequencies.len() * self.phase_count
    }

    pub fn frequency_slot(&self, k: usize) -> Option<usize> {
        self.frequencies.iter().position(|&f| f == k)
    }

    pub fn image(&self, slot: usize, phase: usize, pixels: usize) -> &[f64] {
        let start = (slot * self.phase_count + phase) * pixels;
        &self.data[start..start + pixels]
    }
}

/// Measured intensities `I_i(u, v; k, theta)` over the camera raster.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityStack {
    pub camera_cols: usize,
    pub camera_rows: usize,
    pub mean: f64,
    pub contrast: f64,
    pub groups: Vec<StackGroup>,
}

impl IntensityStack {
    pub fn new(camera_cols: usize, camera_rows: usize, mean: f64, contrast: f64) -> Self {
        IntensityStack { camera_cols, camera_rows, mean, contrast, groups: Vec::new() }
    }

    pub fn pixels(&self) -> usize {
        self.camera_cols * self.camera_rows
    }

    pub fn pattern_count(&self) -> usize {
        self.groups.iter().map(StackGroup::pattern_count).sum()
    }

    pub fn group(&self, direction: usize, kind: GroupKind) -> Option<&StackGroup> {
        self.groups.iter().find(|g| g.direction == direction && g.kind == kind)
    }
}

/// Seeded additive Gaussian noise on captured intensities.
pub struct NoiseSource {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(NoiseSource { sigma, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn none() -> Self {
        NoiseSource { sigma: 0.0, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn apply(&mut self, image: &mut [f64]) {
        if self.sigma == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated");
        for x in image.iter_mut() {
            *x += normal.sample(&mut self.rng);
        }
    }
}

/// PTI samples regrouped with their projection bins for fast rendering.
struct BinnedPti {
    samples: Vec<(u32, f64)>,
}

impl RasterizedScene {
    pub fn pixels(&self) -> usize {
        self.ptis.len()
    }

    fn binned(&self, axis: &ProjectionAxis) -> Vec<BinnedPti> {
        self.ptis
            .par_iter()
            .map(|pti| BinnedPti {
                samples: pti
                    .iter()
                    .filter(|t| t.2 != 0.0)
                    .map(|(u, v, h)| (axis.bin(u as f64, v as f64) as u32, h))
                    .collect(),
            })
            .collect()
    }

    /// Simulate projecting every pattern of `family` and capturing the camera
    /// images. Bit-identical to [`render_intensity`] with the rasterised
    /// patterns; the pattern is looked up by bin instead of by pixel.
    pub fn capture_group(&self, direction: usize, axis: ProjectionAxis, kind: GroupKind, family: &PatternSpec, noise: &mut NoiseSource) -> Result<StackGroup> {
        family.validate()?;
        if (family.theta - axis.theta).abs() > 1e-12 {
            return Err(Error::Contract("pattern family and axis disagree on direction".into()));
        }
        let binned = self.binned(&axis);
        let pixels = self.pixels();
        let mut data = Vec::with_capacity(family.frequencies.len() * family.phase_count * pixels);
        for &k in &family.frequencies {
            for i in 0..family.phase_count {
                let profile = pattern_profile(family.period, k, i, family.phase_count, family.mean, family.contrast, axis.length);
                let mut image: Vec<f64> = binned
                    .par_iter()
                    .zip(self.ambient.par_iter())
                    .map(|(b, &o)| {
                        let mut acc = 0.0;
                        for &(bin, h) in &b.samples {
                            acc += h * profile[bin as usize];
                        }
                        o + acc
                    })
                    .collect();
                noise.apply(&mut image);
                data.extend_from_slice(&image);
            }
        }
        Ok(StackGroup {
            direction,
            axis,
            kind,
            period: family.period,
            frequencies: family.frequencies.clone(),
            phase_count: family.phase_count,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{generate_pattern, PatternRaster};
    use std::f64::consts::FRAC_PI_4;

    fn device() -> DeviceSpec {
        DeviceSpec::new(96, 80, 4, 3).unwrap()
    }

    #[test]
    fn single_lobe_peaks_at_centre() {
        let dev = DeviceSpec::new(1920, 1080, 2, 2).unwrap();
        let mut s = SceneModel::new(dev, 0.0);
        s.set_pixel(0, 0, PixelLtc::direct(Lobe::new(800.0, 540.0, 1.0, 3.0)));
        let pti = rasterize_ltc(&s, (0, 0)).unwrap();
        assert_eq!(pti.argmax(), Some((800, 540)));
    }

    #[test]
    fn empty_scene_is_zero() {
        let s = SceneModel::new(device(), 0.1);
        let pti = rasterize_ltc(&s, (1, 1)).unwrap();
        assert_eq!(pti.total(), 0.0);
        assert!(pti.to_dense().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn disjoint_lobes_superpose() {
        let a = Lobe::new(20.0, 20.0, 1.0, 1.5);
        let b = Lobe::new(60.3, 41.7, 0.4, 2.0);
        let mut s = SceneModel::new(device(), 0.0);
        s.set_pixel(0, 0, PixelLtc::direct(a).with_speckle(b));
        s.set_pixel(1, 0, PixelLtc::direct(a));
        s.set_pixel(2, 0, PixelLtc::direct(b));
        let both = rasterize_ltc(&s, (0, 0)).unwrap().to_dense();
        let ha = rasterize_ltc(&s, (1, 0)).unwrap().to_dense();
        let hb = rasterize_ltc(&s, (2, 0)).unwrap().to_dense();
        for i in 0..both.len() {
            assert!((both[i] - ha[i] - hb[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn subsurface_blur_conserves_mass() {
        let mut s = SceneModel::new(device(), 0.0);
        s.subsurface = Some(3.0);
        s.set_pixel(0, 0, PixelLtc::direct(Lobe::new(48.0, 40.0, 1.0, 1.5)));
        let blurred = rasterize_ltc(&s, (0, 0)).unwrap();
        s.subsurface = None;
        let sharp = rasterize_ltc(&s, (0, 0)).unwrap();
        assert!((blurred.total() - sharp.total()).abs() < 1e-9 * sharp.total());
        assert!(blurred.iter().map(|t| t.2).fold(0.0, f64::max) < sharp.iter().map(|t| t.2).fold(0.0, f64::max));
    }

    fn sample_scene() -> RasterizedScene {
        let mut s = SceneModel::new(device(), 0.0);
        s.ambient = vec![0.05, 0.0, 0.2, 0.1, 0.0, 0.3, 0.0, 0.0, 0.1, 0.0, 0.0, 0.7];
        s.set_pixel(0, 0, PixelLtc::direct(Lobe::new(30.2, 33.9, 1.0, 1.5)).with_speckle(Lobe::new(70.0, 20.0, 0.6, 2.0)));
        s.set_pixel(2, 1, PixelLtc::direct(Lobe::new(10.0, 70.0, 0.8, 1.2)));
        s.set_pixel(3, 2, PixelLtc::direct(Lobe::new(50.5, 50.5, 0.3, 3.0)));
        s.rasterize().unwrap()
    }

    #[test]
    fn zero_pattern_gives_ambient() {
        let r = sample_scene();
        let img = render_intensity(&r, &PatternImage::constant(96, 80, 0.0)).unwrap();
        assert_eq!(img, r.ambient);
    }

    #[test]
    fn unit_pattern_gives_total_transport() {
        let r = sample_scene();
        let img = render_intensity(&r, &PatternImage::constant(96, 80, 1.0)).unwrap();
        for ((i, o), pti) in img.iter().zip(&r.ambient).zip(&r.ptis) {
            assert!((i - o - pti.total()).abs() < 1e-12);
        }
    }

    #[test]
    fn render_rejects_wrong_raster() {
        let r = sample_scene();
        assert!(matches!(render_intensity(&r, &PatternImage::constant(95, 80, 1.0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn render_is_affine_in_pattern() {
        let mut s = SceneModel::new(device(), 0.0);
        s.set_pixel(1, 1, PixelLtc::direct(Lobe::new(40.0, 30.0, 1.0, 2.0)).with_speckle(Lobe::new(20.0, 60.0, 0.5, 1.0)));
        let r = s.rasterize().unwrap();
        let dev = device();
        let p1 = generate_pattern(&PatternSpec { theta: 0.3, period: 50, frequencies: vec![3], phase_count: 3, mean: 0.5, contrast: 0.4 }, 3, 1, &dev).unwrap();
        let p2 = generate_pattern(&PatternSpec { theta: 2.0, period: 70, frequencies: vec![5], phase_count: 4, mean: 0.5, contrast: 0.2 }, 5, 2, &dev).unwrap();
        let (al, be) = (0.7, -1.3);
        let mix = PatternImage { cols: 96, rows: 80, data: p1.data.iter().zip(&p2.data).map(|(a, b)| al * a + be * b).collect() };
        let i1 = render_intensity(&r, &p1).unwrap();
        let i2 = render_intensity(&r, &p2).unwrap();
        let im = render_intensity(&r, &mix).unwrap();
        for j in 0..im.len() {
            assert!((im[j] - al * i1[j] - be * i2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_capture_matches_literal_render() {
        let r = sample_scene();
        let dev = device();
        for theta in [0.0, FRAC_PI_4, 2.3] {
            let axis = ProjectionAxis::new(theta, &dev).unwrap();
            let family = PatternSpec { theta, period: axis.length, frequencies: vec![0, 1, 7], phase_count: 3, mean: 0.5, contrast: 0.4 };
            let g = r.capture_group(0, axis, GroupKind::Full, &family, &mut NoiseSource::none()).unwrap();
            let raster = PatternRaster::new(axis, dev);
            for (slot, &k) in family.frequencies.iter().enumerate() {
                for i in 0..3 {
                    let img = render_intensity(&r, &raster.render(&family, k, i).unwrap()).unwrap();
                    assert_eq!(g.image(slot, i, r.pixels()), &img[..]);
                }
            }
        }
    }

    #[test]
    fn impulse_sifts_to_its_bin() {
        let dev = device();
        let mut dense = vec![0.0; dev.projector_pixels()];
        dense[37 * 96 + 51] = 1.0;
        let pti = PixelTransportImage::from_dense(dev, &dense).unwrap();
        for theta in [0.0, 0.7, FRAC_PI_4, 1.9, 3.0] {
            let axis = ProjectionAxis::new(theta, &dev).unwrap();
            let f = radon_oracle(&pti, &axis);
            let b = (51.0 * theta.cos() + 37.0 * theta.sin() + axis.offset as f64).round() as usize;
            assert_eq!(f[b], 1.0);
            assert_eq!(f.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn zero_angle_oracle_is_column_sum() {
        let r = sample_scene();
        let dev = device();
        let axis = ProjectionAxis::new(0.0, &dev).unwrap();
        let pti = &r.ptis[0];
        let f = radon_oracle(pti, &axis);
        let dense = pti.to_dense();
        for u in 0..96 {
            let col: f64 = (0..80).map(|v| dense[v * 96 + u]).sum();
            assert!((f[u] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        NoiseSource::new(0.1, 7).unwrap().apply(&mut a);
        NoiseSource::new(0.1, 7).unwrap().apply(&mut b);
        assert_eq!(a, b);
        assert!(a.iter().any(|&x| x != 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn oracle_conserves_mass(u in 10.0..86.0f64, v in 10.0..70.0f64, r in 0.5..3.0f64,
                                     su in 5.0..90.0f64, sv in 5.0..75.0f64, theta in 0.0..3.14f64) {
                let mut s = SceneModel::new(device(), 0.0);
                s.set_pixel(0, 0, PixelLtc::direct(Lobe::new(u, v, 1.0, r)).with_speckle(Lobe::new(su, sv, 0.5, 1.0)));
                let pti = rasterize_ltc(&s, (0, 0)).unwrap();
                let f = radon_oracle(&pti, &ProjectionAxis::new(theta, &device()).unwrap());
                let total = pti.total();
                prop_assert!((f.iter().sum::<f64>() - total).abs() <= 1e-9 * total);
            }

            /// Local-maximum constraint: with no speckle on the projection line
            /// through the direct lobe, a local maximum lies within two bins of it.
            #[test]
            fn direct_projection_is_local_max(u in 30.0..66.0f64, v in 25.0..55.0f64, r in 1.0..2.5f64,
                                              theta in 0.0..3.14f64, su in 5.0..90.0f64, sv in 5.0..75.0f64,
                                              sr in 0.8..2.0f64, amp in 0.1..3.0f64) {
                let dev = device();
                let axis = ProjectionAxis::new(theta, &dev).unwrap();
                let rho0 = u * theta.cos() + v * theta.sin();
                let rho_s = su * theta.cos() + sv * theta.sin();
                prop_assume!((rho0 - rho_s).abs() > LOBE_TRUNCATION * (r + sr) + 2.0);
                let mut s = SceneModel::new(dev, 0.0);
                s.set_pixel(0, 0, PixelLtc::direct(Lobe::new(u, v, 1.0, r)).with_speckle(Lobe::new(su, sv, amp, sr)));
                let f = radon_oracle(&rasterize_ltc(&s, (0, 0)).unwrap(), &axis);
                let b0 = axis.rho_to_bin(rho0).round() as i64;
                // Nearest-bin projection jitters by up to one bin on oblique axes.
                let found = (b0 - 2..=b0 + 2).any(|b| {
                    let b = b as usize;
                    f[b] > f[b - 1] && f[b] >= f[b + 1] || f[b] >= f[b - 1] && f[b] > f[b + 1]
                });
                prop_assert!(found);
            }
        }
    }
}
