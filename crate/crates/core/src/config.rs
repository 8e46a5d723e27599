//! TOML scene descriptions and run configurations.
//!
//! A scene lists the devices, the rig, analytic surfaces that produce one
//! direct lobe per camera pixel, rules that add inter-reflection speckles,
//! and optional explicit per-pixel light transport. A run config names a
//! scene and carries every capture, reconstruction and matching parameter.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{DeviceSpec, Intrinsics, StereoRig, DEFAULT_RANK_EPS};
use crate::ltc_sim::{Lobe, PixelLtc, SceneModel};
use crate::matching::{MatchParams, DEFAULT_EPS_EPI, DEFAULT_EPS_R, RANSAC_DIRECTIONS_DEG};
use crate::patterns::{DEFAULT_CONTRAST, DEFAULT_MEAN};
use crate::pointcloud::ContinuityParams;
use crate::recon::{NoiseThreshold, DEFAULT_COARSE_FREQUENCIES, DEFAULT_KAISER_BETA};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub projector_cols: usize,
    pub projector_rows: usize,
    pub camera_cols: usize,
    pub camera_rows: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig { projector_cols: 256, projector_rows: 256, camera_cols: 64, camera_rows: 64 }
    }
}

/// Rectified rig. Principal points default to the raster centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub camera_focal: f64,
    pub camera_cx: Option<f64>,
    pub camera_cy: Option<f64>,
    pub projector_focal: f64,
    pub projector_cx: Option<f64>,
    pub projector_cy: Option<f64>,
    pub baseline_mm: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            camera_focal: 200.0,
            camera_cx: None,
            camera_cy: None,
            projector_focal: 200.0,
            projector_cx: None,
            projector_cy: None,
            baseline_mm: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Direct lobe amplitude; scene default when absent.
    pub amplitude: Option<f64>,
    /// Direct lobe radius (projector pixels); scene default when absent.
    pub radius: Option<f64>,
    /// Subsurface kernel width (projector pixels).
    pub subsurface: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        material: Material,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        material: Material,
    },
}

impl SurfaceConfig {
    pub fn material(&self) -> &Material {
        match self {
            SurfaceConfig::Plane { material, .. } | SurfaceConfig::Sphere { material, .. } => material,
        }
    }

    /// Ray parameter of the nearest forward hit of `origin + t*dir`.
    fn hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            SurfaceConfig::Plane { point, normal, .. } => {
                let n = Vector3::from(*normal);
                let den = n.dot(dir);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(Point3::from(*point) - origin)) / den;
                (t > 0.0).then_some(t)
            }
            SurfaceConfig::Sphere { center, radius, .. } => {
                let oc = origin - Point3::from(*center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SurfaceConfig::Plane { normal, .. } if Vector3::from(*normal).norm() == 0.0 => {
                Err(Error::Config("plane normal must be non-zero".into()))
            }
            SurfaceConfig::Sphere { radius, .. } if !(*radius > 0.0) => Err(Error::Config("sphere radius must be > 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeckleRule {
    /// Speckle on the pixel's epipolar line, displaced along `u'` by a
    /// uniformly drawn offset from the direct lobe.
    Epipolar {
        offset: [f64; 2],
        amplitude: [f64; 2],
        radius: f64,
        #[serde(default = "one")]
        probability: f64,
        #[serde(default)]
        seed: u64,
        surface: Option<usize>,
    },
    /// Speckle at a fixed displacement from the direct lobe.
    Offset {
        offset: [f64; 2],
        amplitude: f64,
        radius: f64,
        surface: Option<usize>,
    },
    /// One specular bounce off plane `mirror`: light aimed at the mirror
    /// image of the surface point reaches it after reflection.
    Mirror {
        mirror: usize,
        amplitude: f64,
        radius: f64,
        surface: Option<usize>,
    },
}

impl SpeckleRule {
    fn surface(&self) -> Option<usize> {
        match self {
            SpeckleRule::Epipolar { surface, .. } | SpeckleRule::Offset { surface, .. } | SpeckleRule::Mirror { surface, .. } => *surface,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobeConfig {
    pub u: f64,
    pub v: f64,
    pub amplitude: f64,
    pub radius: f64,
}

impl From<LobeConfig> for Lobe {
    fn from(l: LobeConfig) -> Self {
        Lobe::new(l.u, l.v, l.amplitude, l.radius)
    }
}

/// Explicit light transport for one camera pixel; replaces anything the
/// surfaces produced there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelConfig {
    pub camera: [usize; 2],
    pub direct: Option<LobeConfig>,
    #[serde(default)]
    pub speckles: Vec<LobeConfig>,
    pub subsurface: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default)]
    pub ambient: f64,
    #[serde(default = "default_lobe_radius")]
    pub lobe_radius: f64,
    #[serde(default = "one")]
    pub lobe_amplitude: f64,
    #[serde(default)]
    pub surfaces: Vec<SurfaceConfig>,
    #[serde(default)]
    pub speckles: Vec<SpeckleRule>,
    #[serde(default)]
    pub pixels: Vec<PixelConfig>,
}

fn default_lobe_radius() -> f64 {
    1.5
}

/// Where each camera pixel's direct light comes from.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    /// Projector position of the direct lobe, per camera pixel.
    pub direct: Vec<Option<(f64, f64)>>,
    /// Surface point seen by the pixel, if any.
    pub surface: Vec<Option<Point3<f64>>>,
    /// Index of the surface hit.
    pub surface_index: Vec<Option<usize>>,
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn device(&self) -> Result<DeviceSpec> {
        let d = self.device;
        DeviceSpec::new(d.projector_cols, d.projector_rows, d.camera_cols, d.camera_rows)
    }

    pub fn rig(&self) -> Result<StereoRig> {
        let dev = self.device()?;
        let r = &self.rig;
        let camera = Intrinsics {
            focal_px: r.camera_focal,
            cx: r.camera_cx.unwrap_or(dev.camera_cols as f64 / 2.0),
            cy: r.camera_cy.unwrap_or(dev.camera_rows as f64 / 2.0),
        };
        let projector = Intrinsics {
            focal_px: r.projector_focal,
            cx: r.projector_cx.unwrap_or(dev.projector_cols as f64 / 2.0),
            cy: r.projector_cy.unwrap_or(dev.projector_rows as f64 / 2.0),
        };
        StereoRig::new(dev, camera, projector, r.baseline_mm)
    }

    /// Build the light-transport model and its ground truth.
    pub fn build(&self) -> Result<(StereoRig, SceneModel, SceneTruth)> {
        let rig = self.rig()?;
        let dev = rig.device;
        if !(self.ambient >= 0.0) || !(self.lobe_radius > 0.0) || !(self.lobe_amplitude >= 0.0) {
            return Err(Error::Config("ambient, lobe_radius and lobe_amplitude must be non-negative".into()));
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        let mut scene = SceneModel::new(dev, self.ambient);
        let n = dev.camera_pixels();
        let mut truth = SceneTruth { direct: vec![None; n], surface: vec![None; n], surface_index: vec![None; n] };
        let origin = rig.camera_center();
        for v in 0..dev.camera_rows {
            for u in 0..dev.camera_cols {
                let ray = rig.camera_ray(u as f64, v as f64);
                let best = self
                    .surfaces
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.hit(&origin, &ray).map(|t| (i, t)))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                let Some((si, t)) = best else { continue };
                let x = origin + ray * t;
                let Some(p) = rig.project_to_projector(&x) else { continue };
                if p.0 < 0.0 || p.1 < 0.0 || p.0 > (dev.projector_cols - 1) as f64 || p.1 > (dev.projector_rows - 1) as f64 {
                    continue;
                }
                let m = self.surfaces[si].material();
                let lobe = Lobe::new(p.0, p.1, m.amplitude.unwrap_or(self.lobe_amplitude), m.radius.unwrap_or(self.lobe_radius));
                let idx = scene.pixel_index(u, v);
                scene.pixels[idx] = PixelLtc { direct: Some(lobe), speckles: Vec::new(), subsurface: m.subsurface };
                truth.direct[idx] = Some(p);
                truth.surface[idx] = Some(x);
                truth.surface_index[idx] = Some(si);
            }
        }
        for (ri, rule) in self.speckles.iter().enumerate() {
            self.apply_rule(ri, rule, &rig, &mut scene, &truth)?;
        }
        for pc in &self.pixels {
            let [u, v] = pc.camera;
            dev.check_camera_pixel(u as i64, v as i64)?;
            let idx = scene.pixel_index(u, v);
            scene.pixels[idx] = PixelLtc {
                direct: pc.direct.map(Lobe::from),
                speckles: pc.speckles.iter().map(|&l| Lobe::from(l)).collect(),
                subsurface: pc.subsurface,
            };
            truth.direct[idx] = pc.direct.map(|l| (l.u, l.v));
            truth.surface[idx] = None;
            truth.surface_index[idx] = None;
        }
        scene.validate()?;
        Ok((rig, scene, truth))
    }

    fn apply_rule(&self, index: usize, rule: &SpeckleRule, rig: &StereoRig, scene: &mut SceneModel, truth: &SceneTruth) -> Result<()> {
        let mut rng = match rule {
            SpeckleRule::Epipolar { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))),
            _ => None,
        };
        let mirror_plane = match rule {
            SpeckleRule::Mirror { mirror, .. } => match self.surfaces.get(*mirror) {
                Some(SurfaceConfig::Plane { point, normal, .. }) => Some((Point3::from(*point), Vector3::from(*normal).normalize())),
                _ => return Err(Error::Config(format!("mirror rule {index}: surface {mirror} is not a plane"))),
            },
            _ => None,
        };
        let dev = rig.device;
        for idx in 0..scene.pixels.len() {
            let (Some(direct), Some(si)) = (truth.direct[idx], truth.surface_index[idx]) else { continue };
            if rule.surface().is_some_and(|s| s != si) {
                continue;
            }
            let lobe = match rule {
                SpeckleRule::Epipolar { offset, amplitude, radius, probability, .. } => {
                    let rng = rng.as_mut().expect("seeded above");
                    let du = rng.random_range(offset[0].min(offset[1])..=offset[0].max(offset[1]));
                    let a = rng.random_range(amplitude[0].min(amplitude[1])..=amplitude[0].max(amplitude[1]));
                    let keep = rng.random_bool(probability.clamp(0.0, 1.0));
                    if !keep {
                        continue;
                    }
                    Lobe::new(direct.0 + du, direct.1, a, *radius)
                }
                SpeckleRule::Offset { offset, amplitude, radius, .. } => Lobe::new(direct.0 + offset[0], direct.1 + offset[1], *amplitude, *radius),
                SpeckleRule::Mirror { mirror, amplitude, radius, .. } => {
                    if si == *mirror {
                        continue;
                    }
                    let (q, n) = mirror_plane.expect("resolved above");
                    let x = truth.surface[idx].expect("surface pixel");
                    let image = x - n * (2.0 * n.dot(&(x - q)));
                    let Some(p) = rig.project_to_projector(&image) else { continue };
                    Lobe::new(p.0, p.1, *amplitude, *radius)
                }
            };
            let inside = lobe.u >= 0.0 && lobe.v >= 0.0 && lobe.u <= (dev.projector_cols - 1) as f64 && lobe.v <= (dev.projector_rows - 1) as f64;
            if inside {
                scene.pixels[idx].speckles.push(lobe);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Four directions with mixed-peak exclusion.
    Ransac4,
    /// Horizontal direction crossed with the epipolar line.
    Unidirectional,
    /// Plain intersection of every direction; no mixed-peak handling.
    Intersect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    None,
    Plane,
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub noise_relative: f64,
    pub noise_sigma_factor: f64,
    pub noise_absolute: f64,
    pub noise_min_snr: f64,
    pub peak_relative: f64,
    pub eps_r: f64,
    pub eps_epi: f64,
    pub eps_rank: f64,
    pub kaiser_beta: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        let n = NoiseThreshold::default();
        ThresholdConfig {
            noise_relative: n.relative,
            noise_sigma_factor: n.sigma_factor,
            noise_absolute: n.absolute,
            noise_min_snr: n.min_snr,
            peak_relative: 0.05,
            eps_r: DEFAULT_EPS_R,
            eps_epi: DEFAULT_EPS_EPI,
            eps_rank: DEFAULT_RANK_EPS,
            kaiser_beta: DEFAULT_KAISER_BETA,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityConfig {
    pub r_th: f64,
    pub n_th: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fit: FitKind,
    /// Ratios evaluated by the sweep.
    pub ratios: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { fit: FitKind::None, ratios: SWEEP_RATIOS.to_vec() }
    }
}

/// Default capture ratios of the sweep.
pub const SWEEP_RATIOS: [f64; 19] =
    [0.05, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20, 0.22, 0.25, 0.30, 0.35, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 1.00];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene file, relative to the run config's directory.
    pub scene: PathBuf,
    pub directions: Vec<f64>,
    pub strategy: Strategy,
    pub eta: f64,
    pub coarse_frequencies: usize,
    pub phase_count: usize,
    pub mean: f64,
    pub contrast: f64,
    /// Fixed fine period; derived from the coarse supports when absent.
    pub fine_period: Option<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub thresholds: ThresholdConfig,
    pub continuity: Option<ContinuityConfig>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: PathBuf::from("scene.toml"),
            directions: RANSAC_DIRECTIONS_DEG.to_vec(),
            strategy: Strategy::Ransac4,
            eta: 0.25,
            coarse_frequencies: DEFAULT_COARSE_FREQUENCIES,
            phase_count: 3,
            mean: DEFAULT_MEAN,
            contrast: DEFAULT_CONTRAST,
            fine_period: None,
            noise_sigma: 0.0,
            seed: 1,
            output: PathBuf::from("out"),
            thresholds: ThresholdConfig::default(),
            continuity: None,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.is_empty() {
            return Err(Error::Config("direction list is empty".into()));
        }
        if self.directions.iter().any(|d| !(0.0..180.0).contains(d)) {
            return Err(Error::Config("directions must lie in [0, 180) degrees".into()));
        }
        match self.strategy {
            Strategy::Ransac4 if self.directions != RANSAC_DIRECTIONS_DEG => {
                return Err(Error::Config("strategy ransac4 requires directions [0, 45, 90, 135]".into()));
            }
            Strategy::Unidirectional if self.directions != [0.0] => {
                return Err(Error::Config("strategy unidirectional requires directions [0]".into()));
            }
            Strategy::Intersect if self.directions.len() < 2 => {
                return Err(Error::Config("strategy intersect requires at least 2 directions".into()));
            }
            _ => {}
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta {} outside (0, 1]", self.eta)));
        }
        if self.coarse_frequencies < 2 {
            return Err(Error::Config("coarse_frequencies must be >= 2".into()));
        }
        if self.phase_count < 3 {
            return Err(Error::Config("phase_count must be >= 3".into()));
        }
        if !(self.contrast > 0.0 && self.contrast <= self.mean.min(1.0 - self.mean)) {
            return Err(Error::Config("need 0 < contrast <= min(mean, 1 - mean)".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if let Some(c) = self.continuity {
            self::ContinuityParams::from(c).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.eval.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("sweep ratios must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn scene_path(&self, config_dir: &Path) -> PathBuf {
        if self.scene.is_absolute() { self.scene.clone() } else { config_dir.join(&self.scene) }
    }

    pub fn coarse_threshold(&self) -> NoiseThreshold {
        let t = &self.thresholds;
        NoiseThreshold { relative: t.noise_relative, sigma_factor: t.noise_sigma_factor, absolute: t.noise_absolute, min_snr: t.noise_min_snr }
    }

    pub fn peak_threshold(&self) -> NoiseThreshold {
        let t = &self.thresholds;
        NoiseThreshold { relative: t.peak_relative, sigma_factor: t.noise_sigma_factor, absolute: t.noise_absolute, min_snr: 0.0 }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams { eps_r: self.thresholds.eps_r, eps_epi: self.thresholds.eps_epi, rank_eps: self.thresholds.eps_rank }
    }

    pub fn continuity_params(&self) -> Option<ContinuityParams> {
        self.continuity.map(ContinuityParams::from)
    }
}

impl From<ContinuityConfig> for ContinuityParams {
    fn from(c: ContinuityConfig) -> Self {
        ContinuityParams { r_th: c.r_th, n_th: c.n_th }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANE: &str = r#"
        name = "plane"
        ambient = 0.02
        [rig]
        camera_focal = 200.0
        projector_focal = 200.0
        baseline_mm = 100.0
        [[surfaces]]
        kind = "plane"
        point = [0.0, 0.0, 500.0]
        normal = [0.0, 0.0, 1.0]
    "#;

    #[test]
    fn plane_scene_lobes_follow_disparity() {
        let cfg = SceneConfig::parse(PLANE).unwrap();
        let (rig, scene, truth) = cfg.build().unwrap();
        assert_eq!(scene.device.camera_pixels(), 4096);
        // Disparity f*B/Z = 40 px; principal points 32 and 128 add 96.
        let idx = scene.pixel_index(10, 20);
        let (u, v) = truth.direct[idx].unwrap();
        assert!((u - (10.0 + 96.0 - 40.0)).abs() < 1e-9, "{u}");
        assert!((v - (20.0 + 96.0)).abs() < 1e-9);
        assert!((truth.surface[idx].unwrap().z - 500.0).abs() < 1e-9);
        let line = rig.epipolar_line(10, 20).unwrap();
        assert!(line.distance(u, v) < 1e-9);
    }

    #[test]
    fn epipolar_speckles_stay_on_the_line() {
        let text = format!("{PLANE}\n[[speckles]]\nkind = \"epipolar\"\noffset = [-45.0, -15.0]\namplitude = [0.3, 0.8]\nradius = 1.5\nseed = 4\n");
        let (rig, scene, truth) = SceneConfig::parse(&text).unwrap().build().unwrap();
        let mut n = 0;
        for (i, p) in scene.pixels.iter().enumerate() {
            let (u, v) = scene.pixel_coords(i);
            let line = rig.epipolar_line(u as i64, v as i64).unwrap();
            for s in &p.speckles {
                n += 1;
                assert!(line.distance(s.u, s.v) < 1e-9);
                let du = s.u - truth.direct[i].unwrap().0;
                assert!((-45.0..=-15.0).contains(&du));
            }
        }
        assert!(n > 3000);
    }

    #[test]
    fn mirror_speckle_is_reflection() {
        let text = r#"
            [[surfaces]]
            kind = "plane"
            point = [0.0, 0.0, 500.0]
            normal = [0.0, 0.0, 1.0]
            [[surfaces]]
            kind = "plane"
            point = [20.0, 0.0, 0.0]
            normal = [1.0, 0.0, 0.0]
            [[speckles]]
            kind = "mirror"
            mirror = 1
            amplitude = 0.5
            radius = 2.0
        "#;
        let (rig, scene, truth) = SceneConfig::parse(text).unwrap().build().unwrap();
        let idx = truth.surface_index.iter().position(|s| *s == Some(0)).unwrap();
        let x = truth.surface[idx].unwrap();
        let img = Point3::new(40.0 - x.x, x.y, x.z);
        let p = rig.project_to_projector(&img).unwrap();
        let s = scene.pixels[idx].speckles.first().unwrap();
        assert!((s.u - p.0).abs() < 1e-9 && (s.v - p.1).abs() < 1e-9);
    }

    #[test]
    fn sphere_hits_nearest_side() {
        let text = r#"
            [rig]
            camera_focal = 800.0
            projector_focal = 800.0
            baseline_mm = 60.0
            [[surfaces]]
            kind = "sphere"
            center = [0.0, 0.0, 400.0]
            radius = 12.0
        "#;
        let (_, _, truth) = SceneConfig::parse(text).unwrap().build().unwrap();
        let hits: Vec<_> = truth.surface.iter().flatten().collect();
        assert!(!hits.is_empty());
        for x in hits {
            assert!(((x - Point3::new(0.0, 0.0, 400.0)).norm() - 12.0).abs() < 1e-9);
            assert!(x.z <= 400.0);
        }
    }

    #[test]
    fn explicit_pixels_override() {
        let text = format!("{PLANE}\n[[pixels]]\ncamera = [1, 2]\ndirect = {{ u = 10.0, v = 11.0, amplitude = 2.0, radius = 1.0 }}\nspeckles = [{{ u = 50.0, v = 11.0, amplitude = 0.5, radius = 1.0 }}]\n");
        let (_, scene, truth) = SceneConfig::parse(&text).unwrap().build().unwrap();
        let i = scene.pixel_index(1, 2);
        assert_eq!(scene.pixels[i].direct.unwrap().amplitude, 2.0);
        assert_eq!(scene.pixels[i].speckles.len(), 1);
        assert_eq!(truth.direct[i], Some((10.0, 11.0)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SceneConfig::parse("lobe_radios = 2.0").is_err());
        assert!(RunConfig::parse("etaa = 0.2").is_err());
    }

    #[test]
    fn run_config_defaults_and_strategy_rules() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.directions, vec![0.0, 45.0, 90.0, 135.0]);
        assert_eq!(c.coarse_frequencies, 10);
        assert!(RunConfig::parse("strategy = \"unidirectional\"").is_err());
        assert!(RunConfig::parse("strategy = \"unidirectional\"\ndirections = [0.0]").is_ok());
        assert!(RunConfig::parse("directions = []").is_err());
        assert!(RunConfig::parse("eta = 0.0").is_err());
        assert!(RunConfig::parse("contrast = 0.6").is_err());
        assert!(RunConfig::parse("strategy = \"intersect\"\ndirections = [0.0, 60.0, 120.0]").is_ok());
    }

    #[test]
    fn configs_round_trip() {
        let s = SceneConfig::parse(PLANE).unwrap();
        assert_eq!(SceneConfig::parse(&s.to_toml().unwrap()).unwrap(), s);
        let mut r = RunConfig { continuity: Some(ContinuityConfig { r_th: 5.0, n_th: 300 }), ..Default::default() };
        r.fine_period = Some(64);
        assert_eq!(RunConfig::parse(&r.to_toml().unwrap()).unwrap(), r);
    }
}
