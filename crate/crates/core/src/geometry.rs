//! Synthetic rectified projector/camera rig.
//!
//! Both devices are ideal pinholes with parallel optical axes. The camera sits
//! at the world origin looking down +z; the projector is displaced by the
//! baseline along +x. Under this arrangement every epipolar line in the
//! projector plane is horizontal, which is what the unidirectional matching
//! strategy relies on.

use nalgebra::{DMatrix, Matrix3x4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pixel resolutions of the projector (M x N) and the camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub projector_cols: usize,
    pub projector_rows: usize,
    pub camera_cols: usize,
    pub camera_rows: usize,
}

impl DeviceSpec {
    pub fn new(projector_cols: usize, projector_rows: usize, camera_cols: usize, camera_rows: usize) -> Result<Self> {
        let device = DeviceSpec { projector_cols, projector_rows, camera_cols, camera_rows };
        device.validate()?;
        Ok(device)
    }

    pub fn validate(&self) -> Result<()> {
        if self.projector_cols == 0 || self.projector_rows == 0 || self.camera_cols == 0 || self.camera_rows == 0 {
            return Err(Error::Domain("device dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn camera_pixels(&self) -> usize {
        self.camera_cols * self.camera_rows
    }

    pub fn projector_pixels(&self) -> usize {
        self.projector_cols * self.projector_rows
    }

    pub fn check_camera_pixel(&self, u: i64, v: i64) -> Result<()> {
        if u < 0 || v < 0 || u as usize >= self.camera_cols || v as usize >= self.camera_rows {
            return Err(Error::OutOfBounds { u, v, cols: self.camera_cols, rows: self.camera_rows });
        }
        Ok(())
    }
}

/// Pinhole intrinsics with square pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Epipolar line `a*u' + b*v' + c = 0` in projector coordinates, normalised
/// so that `a^2 + b^2 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let n = a.hypot(b);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Domain("epipolar line needs (a, b) != (0, 0)".into()));
        }
        Ok(EpipolarLine { a: a / n, b: b / n, c: c / n })
    }

    /// Unsigned point-to-line distance in projector pixels.
    pub fn distance(&self, u: f64, v: f64) -> f64 {
        (self.a * u + self.b * v + self.c).abs()
    }
}

/// Projection line `x*cos(theta) + y*sin(theta) = rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2D {
    pub theta: f64,
    pub rho: f64,
}

impl Line2D {
    pub fn new(theta: f64, rho: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::PI).contains(&theta) {
            return Err(Error::AngleDomain(theta));
        }
        Ok(Line2D { theta, rho })
    }

    /// Line through `(u, v)` perpendicular to the direction line at `theta`.
    pub fn through(theta: f64, u: f64, v: f64) -> Self {
        Line2D { theta, rho: project_onto_direction(theta, u, v) }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.theta.cos(), self.theta.sin(), -self.rho)
    }
}

/// Position of `(u, v)` along the direction line at angle `theta`.
pub fn project_onto_direction(theta: f64, u: f64, v: f64) -> f64 {
    theta.cos() * u + theta.sin() * v
}

/// Default rank tolerance for [`intersect_projection_lines`].
pub const DEFAULT_RANK_EPS: f64 = 1e-3;

/// Least-squares common point of a bundle of projection lines.
///
/// Returns `Ok(None)` when the bundle has no common point; see
/// [`solve_homogeneous_rows`] for the rank test.
pub fn intersect_projection_lines(lines: &[Line2D], rank_eps: f64) -> Result<Option<(f64, f64)>> {
    if lines.len() < 2 {
        return Err(Error::Contract("need at least two projection lines".into()));
    }
    let first = lines[0].theta;
    if lines.iter().all(|l| angle_equal_mod_pi(l.theta, first)) {
        return Err(Error::DegenerateDirections);
    }
    let rows: Vec<Vector3<f64>> = lines.iter().map(Line2D::homogeneous).collect();
    Ok(solve_homogeneous_rows(&rows, rank_eps))
}

/// Null vector of a stack of homogeneous line rows `(a, b, c)`.
///
/// Each row is normalised to a unit normal and the point coordinates are
/// rescaled by the largest line offset before the SVD, so the rank test is
/// independent of row scaling and of the projector resolution. The bundle
/// is rejected when the smallest singular value exceeds `rank_eps` times
/// the largest, or when the null vector lies at infinity. An accepted
/// bundle returns the least-squares point of the unit-normal rows.
pub fn solve_homogeneous_rows(rows: &[Vector3<f64>], rank_eps: f64) -> Option<(f64, f64)> {
    let unit: Vec<Vector3<f64>> = rows
        .iter()
        .filter_map(|r| {
            let n = r.x.hypot(r.y);
            (n > 0.0).then(|| r / n)
        })
        .collect();
    if unit.len() < 2 {
        return None;
    }
    let scale = unit.iter().fold(1.0_f64, |m, r| m.max(r.z.abs()));
    // Pad to three rows so the full right singular basis is available.
    let mut a = DMatrix::<f64>::zeros(unit.len().max(3), 3);
    for (i, r) in unit.iter().enumerate() {
        a[(i, 0)] = r.x;
        a[(i, 1)] = r.y;
        a[(i, 2)] = r.z / scale;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let (imin, smin) = sv.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smin > rank_eps * smax {
        return None;
    }
    let x = v_t.row(imin);
    if x[2].abs() < 1e-12 * x[0].hypot(x[1]).max(1.0) {
        return None;
    }
    // The rank test only gates the bundle; the point itself is the
    // least-squares fit of the perpendicular distances.
    let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &unit {
        sxx += r.x * r.x;
        sxy += r.x * r.y;
        syy += r.y * r.y;
        bx -= r.x * r.z;
        by -= r.y * r.z;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() < 1e-12 * (sxx + syy).powi(2) {
        return None;
    }
    Some(((syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det))
}

/// Homogeneous intersection of a projection line with an epipolar line.
///
/// `None` when the two lines are parallel.
pub fn intersect_with_epipolar(line: &Line2D, epi: &EpipolarLine) -> Option<(f64, f64)> {
    let p = line.homogeneous().cross(&Vector3::new(epi.a, epi.b, epi.c));
    let scale = p.x.abs().max(p.y.abs()).max(1.0);
    if p.z.abs() < 1e-12 * scale {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

fn angle_equal_mod_pi(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d < 1e-12 || (std::f64::consts::PI - d) < 1e-12
}

/// Result of two-view triangulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulation {
    /// World point in millimetres (camera frame).
    pub point: Point3<f64>,
    /// RMS reprojection error over both devices, pixels.
    pub residual_px: f64,
}

/// Minimum angle between rays accepted by the triangulator.
pub const MIN_RAY_ANGLE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub device: DeviceSpec,
    pub camera: Intrinsics,
    pub projector: Intrinsics,
    /// Projector centre offset along +x, millimetres.
    pub baseline_mm: f64,
}

impl StereoRig {
    pub fn new(device: DeviceSpec, camera: Intrinsics, projector: Intrinsics, baseline_mm: f64) -> Result<Self> {
        device.validate()?;
        if !(camera.focal_px > 0.0 && projector.focal_px > 0.0) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if !(baseline_mm.is_finite() && baseline_mm != 0.0) {
            return Err(Error::Domain("baseline must be finite and non-zero".into()));
        }
        Ok(StereoRig { device, camera, projector, baseline_mm })
    }

    /// Camera projection matrix `K [I | 0]`.
    pub fn camera_matrix(&self) -> Matrix3x4<f64> {
        let k = &self.camera;
        Matrix3x4::new(k.focal_px, 0.0, k.cx, 0.0, 0.0, k.focal_px, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    /// Projector projection matrix `K [I | -B e_x]`.
    pub fn projector_matrix(&self) -> Matrix3x4<f64> {
        let k = &self.projector;
        let b = self.baseline_mm;
        Matrix3x4::new(k.focal_px, 0.0, k.cx, -k.focal_px * b, 0.0, k.focal_px, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    pub fn camera_center(&self) -> Point3<f64> {
        Point3::origin()
    }

    pub fn projector_center(&self) -> Point3<f64> {
        Point3::new(self.baseline_mm, 0.0, 0.0)
    }

    pub fn project_to_camera(&self, x: &Point3<f64>) -> Option<(f64, f64)> {
        project(&self.camera_matrix(), x)
    }

    pub fn project_to_projector(&self, x: &Point3<f64>) -> Option<(f64, f64)> {
        project(&self.projector_matrix(), x)
    }

    /// Unit direction of the camera ray through `(u, v)`.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.camera;
        Vector3::new((u - k.cx) / k.focal_px, (v - k.cy) / k.focal_px, 1.0).normalize()
    }

    pub fn projector_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.projector;
        Vector3::new((u - k.cx) / k.focal_px, (v - k.cy) / k.focal_px, 1.0).normalize()
    }

    /// Projector-plane epipolar line of a camera pixel.
    ///
    /// With parallel axes and a horizontal baseline the line is
    /// `v' = (f_p / f_c) (v - c_y) + c'_y`.
    pub fn epipolar_line(&self, u: i64, v: i64) -> Result<EpipolarLine> {
        self.device.check_camera_pixel(u, v)?;
        let v_epi = self.projector.focal_px / self.camera.focal_px * (v as f64 - self.camera.cy) + self.projector.cy;
        EpipolarLine::new(0.0, 1.0, -v_epi)
    }

    /// Midpoint triangulation of a camera pixel against a projector point.
    pub fn triangulate(&self, camera_pixel: (i64, i64), projector_point: (f64, f64)) -> Result<Triangulation> {
        let (u, v) = camera_pixel;
        self.device.check_camera_pixel(u, v)?;
        let (up, vp) = projector_point;
        if !(up.is_finite() && vp.is_finite()) {
            return Err(Error::Domain("projector point must be finite".into()));
        }
        let point = triangulate_rays(
            &self.camera_center(),
            &self.camera_ray(u as f64, v as f64),
            &self.projector_center(),
            &self.projector_ray(up, vp),
        )?;
        let residual_px = match (self.project_to_camera(&point), self.project_to_projector(&point)) {
            (Some(c), Some(p)) => {
                let ec = (c.0 - u as f64).powi(2) + (c.1 - v as f64).powi(2);
                let ep = (p.0 - up).powi(2) + (p.1 - vp).powi(2);
                ((ec + ep) / 2.0).sqrt()
            }
            _ => f64::INFINITY,
        };
        Ok(Triangulation { point, residual_px })
    }
}

fn project(p: &Matrix3x4<f64>, x: &Point3<f64>) -> Option<(f64, f64)> {
    let h = p * x.to_homogeneous();
    if h.z.abs() < 1e-15 {
        return None;
    }
    Some((h.x / h.z, h.y / h.z))
}

/// Midpoint of the shortest segment between two rays.
///
/// Symmetric in its two rays: swapping them returns the bit-identical point.
pub fn triangulate_rays(o1: &Point3<f64>, d1: &Vector3<f64>, o2: &Point3<f64>, d2: &Vector3<f64>) -> Result<Point3<f64>> {
    let d1 = d1.normalize();
    let d2 = d2.normalize();
    let angle = d1.cross(&d2).norm().atan2(d1.dot(&d2).abs());
    if angle < MIN_RAY_ANGLE {
        return Err(Error::DegenerateTriangulation { angle });
    }
    let p1 = closest_on_first(o1, &d1, o2, &d2);
    let p2 = closest_on_first(o2, &d2, o1, &d1);
    Ok(Point3::from((p1.coords + p2.coords) * 0.5))
}

fn closest_on_first(o1: &Point3<f64>, d1: &Vector3<f64>, o2: &Point3<f64>, d2: &Vector3<f64>) -> Point3<f64> {
    let w = o1 - o2;
    let b = d1.dot(d2);
    let d = d1.dot(&w);
    let e = d2.dot(&w);
    // d1, d2 are unit: a = c = 1.
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    o1 + d1 * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn rig() -> StereoRig {
        StereoRig::new(
            DeviceSpec::new(256, 256, 64, 64).unwrap(),
            Intrinsics { focal_px: 200.0, cx: 32.0, cy: 32.0 },
            Intrinsics { focal_px: 200.0, cx: 128.0, cy: 32.0 },
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn epipolar_line_is_horizontal() {
        let dev = DeviceSpec::new(1920, 1080, 1600, 1200).unwrap();
        let k = Intrinsics { focal_px: 1000.0, cx: 800.0, cy: 600.0 };
        let r = StereoRig::new(dev, k, Intrinsics { cx: 960.0, ..k }, 100.0).unwrap();
        let l = r.epipolar_line(100, 200).unwrap();
        assert_eq!((l.a, l.b, l.c), (0.0, 1.0, -200.0));

        let shifted = StereoRig::new(dev, k, Intrinsics { cx: 960.0, cy: 605.0, ..k }, 100.0).unwrap();
        let l = shifted.epipolar_line(0, 0).unwrap();
        assert_eq!((l.a, l.b, l.c), (0.0, 1.0, -5.0));
        assert!((l.a * l.a + l.b * l.b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epipolar_line_rejects_out_of_raster() {
        assert!(matches!(rig().epipolar_line(64, 0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(rig().epipolar_line(0, -1), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn axis_pair_intersection() {
        let lines = [Line2D::new(0.0, 1456.408).unwrap(), Line2D::new(FRAC_PI_2, 631.513).unwrap()];
        let (u, v) = intersect_projection_lines(&lines, DEFAULT_RANK_EPS).unwrap().unwrap();
        assert!((u - 1456.408).abs() < 1e-9 && (v - 631.513).abs() < 1e-9, "{u} {v}");
    }

    #[test]
    fn three_line_round_trip() {
        let (u0, v0) = (300.25, 418.75);
        let lines: Vec<_> = [0.0, FRAC_PI_4, FRAC_PI_2].iter().map(|&t| Line2D::through(t, u0, v0)).collect();
        let (u, v) = intersect_projection_lines(&lines, DEFAULT_RANK_EPS).unwrap().unwrap();
        assert!((u - u0).abs() < 1e-9 && (v - v0).abs() < 1e-9);
    }

    #[test]
    fn identical_directions_are_degenerate() {
        let lines = [Line2D::new(0.3, 1.0).unwrap(), Line2D::new(0.3, 5.0).unwrap()];
        assert!(matches!(intersect_projection_lines(&lines, DEFAULT_RANK_EPS), Err(Error::DegenerateDirections)));
    }

    #[test]
    fn inconsistent_bundle_has_no_intersection() {
        // Triangle with sides hundreds of pixels apart.
        let lines = [
            Line2D::new(0.0, 0.0).unwrap(),
            Line2D::new(FRAC_PI_2, 0.0).unwrap(),
            Line2D::through(3.0 * FRAC_PI_4, 0.0, 1000.0),
            Line2D::through(FRAC_PI_4, 1000.0, 1000.0),
        ];
        assert_eq!(intersect_projection_lines(&lines, DEFAULT_RANK_EPS).unwrap(), None);
    }

    #[test]
    fn epipolar_intersection() {
        let epi = EpipolarLine::new(0.0, 1.0, -600.0).unwrap();
        assert_eq!(intersect_with_epipolar(&Line2D::new(0.0, 500.0).unwrap(), &epi), Some((500.0, 600.0)));
        assert_eq!(intersect_with_epipolar(&Line2D::new(FRAC_PI_2, 500.0).unwrap(), &epi), None);
    }

    #[test]
    fn triangulation_round_trip() {
        let r = rig();
        // Camera pixels are integers, so synthesise the point on the ray of (20, 41).
        let ray = r.camera_ray(20.0, 41.0);
        let x = Point3::from(ray * (510.0 / ray.z));
        let p = r.project_to_projector(&x).unwrap();
        let t = r.triangulate((20, 41), p).unwrap();
        assert!((t.point - x).norm() < 1e-6, "{:?}", t.point);
        assert!(t.residual_px < 1e-6);
    }

    #[test]
    fn optical_axis_depth() {
        let r = rig();
        let x = Point3::new(0.0, 0.0, 500.0);
        let p = r.project_to_projector(&x).unwrap();
        let t = r.triangulate((32, 32), p).unwrap();
        assert!((t.point.z - 500.0).abs() < 1e-6);
    }

    #[test]
    fn swapped_rays_give_identical_point() {
        let r = rig();
        let c = r.camera_ray(10.0, 50.0);
        let p = r.projector_ray(77.3, 49.2);
        let a = triangulate_rays(&r.camera_center(), &c, &r.projector_center(), &p).unwrap();
        let b = triangulate_rays(&r.projector_center(), &p, &r.camera_center(), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let r = rig();
        let d = Vector3::new(0.0, 0.0, 1.0);
        let e = triangulate_rays(&r.camera_center(), &d, &r.projector_center(), &d);
        assert!(matches!(e, Err(Error::DegenerateTriangulation { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn forward_project_then_intersect(u in 0.0..1920.0f64, v in 0.0..1080.0f64,
                                              thetas in proptest::collection::vec(0.0..3.14f64, 2..6)) {
                prop_assume!(thetas.iter().any(|t| (t - thetas[0]).abs() > 0.05));
                let lines: Vec<_> = thetas.iter().map(|&t| Line2D::through(t, u, v)).collect();
                let (ru, rv) = intersect_projection_lines(&lines, DEFAULT_RANK_EPS).unwrap().unwrap();
                prop_assert!((ru - u).abs() < 1e-9 && (rv - v).abs() < 1e-9);
            }

            #[test]
            fn row_scaling_invariance(u in 0.0..1920.0f64, v in 0.0..1080.0f64, s in 0.01..100.0f64, row in 0usize..4) {
                let thetas = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];
                let rows: Vec<Vector3<f64>> = thetas.iter().map(|&t| Line2D::through(t, u, v).homogeneous()).collect();
                let a = solve_homogeneous_rows(&rows, DEFAULT_RANK_EPS).unwrap();
                let mut scaled = rows.clone();
                scaled[row] *= s;
                let b = solve_homogeneous_rows(&scaled, DEFAULT_RANK_EPS).unwrap();
                prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
            }

            #[test]
            fn triangulation_residual_small(x in -40.0..40.0f64, y in -40.0..40.0f64) {
                let r = rig();
                let (u, v) = r.project_to_camera(&Point3::new(x, y, 500.0)).unwrap();
                let (u, v) = (u.round(), v.round());
                prop_assume!((0.0..64.0).contains(&u) && (0.0..64.0).contains(&v));
                let ray = r.camera_ray(u, v);
                let p3 = Point3::from(ray * (500.0 / ray.z));
                let p = r.project_to_projector(&p3).unwrap();
                let t = r.triangulate((u as i64, v as i64), p).unwrap();
                prop_assert!(t.residual_px < 1e-6);
                prop_assert!((t.point - p3).norm() < 1e-6);
            }
        }
    }
}
