//! Triangulated point clouds, continuity filtering and surface fits.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix3, Point3, SymmetricEigen, Vector3};

use crate::geometry::StereoRig;
use crate::matching::CandidateMatch;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Point3<f64>,
    /// Source camera pixel.
    pub pixel: (usize, usize),
    /// Index of the candidate within that pixel's match list.
    pub candidate: usize,
    /// Matched projector point.
    pub projector: (f64, f64),
    pub consensus: usize,
}

/// 3D points in millimetres.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn from_positions(positions: &[Point3<f64>]) -> Self {
        PointCloud {
            points: positions.iter().enumerate().map(|(i, &position)| CloudPoint { position, pixel: (i, 0), candidate: 0, projector: (0.0, 0.0), consensus: 0 }).collect(),
        }
    }
}

/// Matches of one camera pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMatches {
    pub pixel: (usize, usize),
    pub matches: Vec<CandidateMatch>,
}

/// Triangulate every candidate; degenerate ones are skipped.
pub fn build_cloud(matches: &[PixelMatches], rig: &StereoRig) -> PointCloud {
    let mut points = Vec::new();
    for pm in matches {
        for (ci, c) in pm.matches.iter().enumerate() {
            match rig.triangulate((pm.pixel.0 as i64, pm.pixel.1 as i64), c.projector) {
                Ok(t) => points.push(CloudPoint { position: t.point, pixel: pm.pixel, candidate: ci, projector: c.projector, consensus: c.consensus }),
                Err(e) => log::debug!("pixel {:?} candidate {ci} skipped: {e}", pm.pixel),
            }
        }
    }
    PointCloud { points }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuityParams {
    /// Adjacency radius, mm.
    pub r_th: f64,
    /// Components must have more than this many points.
    pub n_th: usize,
}

impl ContinuityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_th > 0.0) || self.n_th < 1 {
            return Err(Error::Domain(format!("continuity params need r_th > 0 and N_th >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Exact fixed-radius neighbour queries over a uniform hash grid.
struct RadiusGrid<'a> {
    points: &'a [Point3<f64>],
    radius: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> RadiusGrid<'a> {
    fn new(points: &'a [Point3<f64>], radius: f64) -> Self {
        let mut grid = RadiusGrid { points, radius, cells: HashMap::new() };
        for (i, p) in points.iter().enumerate() {
            let key = grid.cell(p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn cell(&self, p: &Point3<f64>) -> (i64, i64, i64) {
        if !self.radius.is_finite() {
            return (0, 0, 0);
        }
        let c = |x: f64| (x / self.radius).floor() as i64;
        (c(p.x), c(p.y), c(p.z))
    }

    fn for_each_neighbour(&self, i: usize, mut f: impl FnMut(usize)) {
        let p = &self.points[i];
        let (cx, cy, cz) = self.cell(p);
        let r2 = self.radius * self.radius;
        let reach = if self.radius.is_finite() { 1 } else { 0 };
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(list) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in list {
                            if j != i && adjacent(p, &self.points[j], r2) {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjacency predicate shared by the grid search and any reference check.
pub fn adjacent(a: &Point3<f64>, b: &Point3<f64>, r2: f64) -> bool {
    (a - b).norm_squared() <= r2
}

/// Connected-component label of every point under `radius` adjacency.
/// Labels are numbered in order of each component's lowest point index.
pub fn connected_components(points: &[Point3<f64>], radius: f64) -> Vec<usize> {
    let grid = RadiusGrid::new(points, radius);
    let mut label = vec![usize::MAX; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..points.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            grid.for_each_neighbour(i, |j| {
                if label[j] == usize::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            });
        }
        next += 1;
    }
    label
}

/// Keep only the points of connected components with more than `n_th`
/// members. Surviving points keep their original order.
pub fn continuity_filter(cloud: &PointCloud, params: &ContinuityParams) -> Result<PointCloud> {
    params.validate()?;
    let labels = connected_components(&cloud.positions(), params.r_th);
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for &l in &labels {
        *sizes.entry(l).or_default() += 1;
    }
    let points = cloud.points.iter().zip(&labels).filter(|(_, l)| sizes[l] > params.n_th).map(|(p, _)| *p).collect();
    Ok(PointCloud { points })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    /// Unit normal.
    pub normal: Vector3<f64>,
    /// Signed offset: points satisfy `normal . x + d = 0`.
    pub d: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.d
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    if n == 0 { 0.0 } else { (s / n as f64).sqrt() }
}

/// Total least-squares plane and the RMS of orthogonal residuals.
pub fn fit_plane_rms(points: &[Point3<f64>]) -> Result<(Plane, f64)> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("plane needs 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE);
    if eig.eigenvalues[order[1]] <= 1e-12 * scale {
        return Err(Error::DegenerateFit("points are collinear".into()));
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let plane = Plane { normal, d: -normal.dot(&centroid) };
    Ok((plane, rms(points.iter().map(|p| plane.distance(p)))))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Point3<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Geometric least-squares sphere (algebraic start, Gauss-Newton refinement)
/// and the RMS of radial residuals.
pub fn fit_sphere(points: &[Point3<f64>]) -> Result<(Sphere, f64)> {
    if points.len() < 4 {
        return Err(Error::DegenerateFit(format!("sphere needs 4 points, got {}", points.len())));
    }
    let m = points.len();
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / m as f64;
    let mut a = DMatrix::zeros(m, 4);
    let mut b = DVector::zeros(m);
    for (i, p) in points.iter().enumerate() {
        let q = p.coords - mean;
        a[(i, 0)] = 2.0 * q.x;
        a[(i, 1)] = 2.0 * q.y;
        a[(i, 2)] = 2.0 * q.z;
        a[(i, 3)] = 1.0;
        b[i] = q.norm_squared();
    }
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    if s.min() <= 1e-10 * smax {
        return Err(Error::DegenerateFit("points do not span a sphere".into()));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let mut c = Vector3::new(x[0], x[1], x[2]);
    let r2 = x[3] + c.norm_squared();
    if !(r2 > 0.0) {
        return Err(Error::DegenerateFit("algebraic sphere has no real radius".into()));
    }
    let mut r = r2.sqrt();
    for _ in 0..50 {
        let mut j = DMatrix::zeros(m, 4);
        let mut res = DVector::zeros(m);
        for (i, p) in points.iter().enumerate() {
            let d = p.coords - mean - c;
            let n = d.norm();
            if n == 0.0 {
                return Err(Error::DegenerateFit("point at sphere centre".into()));
            }
            res[i] = n - r;
            j[(i, 0)] = -d.x / n;
            j[(i, 1)] = -d.y / n;
            j[(i, 2)] = -d.z / n;
            j[(i, 3)] = -1.0;
        }
        let step = j.svd(true, true).solve(&(-&res), 0.0).map_err(|e| Error::DegenerateFit(e.to_string()))?;
        c += Vector3::new(step[0], step[1], step[2]);
        r += step[3];
        if step.norm() < 1e-13 * r.max(1.0) {
            break;
        }
    }
    let sphere = Sphere { center: Point3::from(c + mean), radius: r };
    Ok((sphere, rms(points.iter().map(|p| (p - sphere.center).norm() - r))))
}
