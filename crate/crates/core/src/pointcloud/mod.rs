//! Point clouds: storage, file I/O, spatial queries, normals, transforms and
//! noise.

mod io;
mod kdtree;
mod pose;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use io::{load_cloud, parse_ply, parse_xyz, save_cloud, CloudFormat};
pub use kdtree::KdTree;
pub use pose::RigidPose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    /// Unit normal, when known.
    pub normal: Option<Vector3<f64>>,
}

impl Point {
    pub fn new(position: Vector3<f64>, normal: Option<Vector3<f64>>) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite point position".into()));
        }
        let normal = match normal {
            Some(n) => {
                let len = n.norm();
                if !len.is_finite() || len == 0.0 {
                    return Err(Error::InvalidInput("normal must be finite and nonzero".into()));
                }
                // keep already-unit normals bit-identical so files round-trip
                if (len - 1.0).abs() <= 1e-12 {
                    Some(n)
                } else {
                    Some(n / len)
                }
            }
            None => None,
        };
        Ok(Self { position, normal })
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            normal: None,
        }
    }
}

/// An ordered list of points with a lazily built spatial index.
///
/// Clouds are immutable once constructed; every operation returns a new cloud.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    resolution: OnceLock<f64>,
    index: OnceLock<KdTree>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            resolution: OnceLock::new(),
            index: OnceLock::new(),
        }
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Vector3<f64>>) -> Self {
        Self::new(
            positions
                .into_iter()
                .map(|position| Point {
                    position,
                    normal: None,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, i: usize) -> &Vector3<f64> {
        &self.points[i].position
    }

    /// True when every point carries a normal.
    pub fn has_normals(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.normal.is_some())
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    pub fn kdtree(&self) -> &KdTree {
        self.index.get_or_init(|| KdTree::build(self.positions()))
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p.position;
        }
        c / self.points.len().max(1) as f64
    }

    /// Indices of the `k` nearest points to `query`, ascending by distance,
    /// ties broken by lower index.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Result<Vec<usize>> {
        if k > self.len() {
            return Err(Error::InvalidInput(format!(
                "k = {k} exceeds point count {}",
                self.len()
            )));
        }
        Ok(self.kdtree().knn(query, k))
    }

    /// Mean distance from each point to its nearest other point. Cached.
    pub fn average_resolution(&self) -> Result<f64> {
        if let Some(r) = self.resolution.get() {
            return Ok(*r);
        }
        if self.len() < 2 {
            return Err(Error::InvalidInput(
                "average resolution needs at least two points".into(),
            ));
        }
        let tree = self.kdtree();
        let mut sum = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            let nn = tree.knn_with_dist2(&p.position, 2);
            let d2 = nn
                .iter()
                .find(|(j, _)| *j != i)
                .map(|(_, d2)| *d2)
                .expect("at least two points");
            sum += d2.sqrt();
        }
        let r = sum / self.len() as f64;
        let _ = self.resolution.set(r);
        Ok(r)
    }

    /// Applies `p -> R p + t` to positions and `n -> R n` to normals.
    pub fn transform(&self, pose: &RigidPose) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| Point {
                    position: pose.apply(&p.position),
                    normal: p.normal.map(|n| pose.apply_direction(&n)),
                })
                .collect(),
        )
    }

    /// Copy with points reordered so that new point `i` is old point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> PointCloud {
        PointCloud::new(order.iter().map(|&i| self.points[i]).collect())
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        self.permuted(indices)
    }

    /// Adds i.i.d. `N(0, sigma²)` to every coordinate and to every normal
    /// component (normals are renormalized). Deterministic in `seed`.
    pub fn add_gaussian_noise(&self, sigma: f64, seed: u64) -> Result<PointCloud> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(PointCloud::new(self.points.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        let draw = |rng: &mut ChaCha8Rng| {
            Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
        };
        let points = self
            .points
            .iter()
            .map(|p| {
                let position = p.position + draw(&mut rng);
                let normal = p.normal.map(|n| {
                    let m = n + draw(&mut rng);
                    let len = m.norm();
                    if len > 1e-12 {
                        m / len
                    } else {
                        n
                    }
                });
                Point { position, normal }
            })
            .collect();
        Ok(PointCloud::new(points))
    }

    /// Keeps one point per occupied voxel: the centroid of its members, with
    /// the averaged (renormalized) normal.
    pub fn voxel_downsample(&self, voxel: f64) -> Result<PointCloud> {
        if !(voxel > 0.0) || !voxel.is_finite() {
            return Err(Error::InvalidInput(format!("voxel must be > 0, got {voxel}")));
        }
        let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, Vector3<f64>, usize, bool)> =
            BTreeMap::new();
        let with_normals = self.has_normals();
        for p in &self.points {
            let key = (
                (p.position.x / voxel).floor() as i64,
                (p.position.y / voxel).floor() as i64,
                (p.position.z / voxel).floor() as i64,
            );
            let e = cells
                .entry(key)
                .or_insert((Vector3::zeros(), Vector3::zeros(), 0, false));
            e.0 += p.position;
            if let Some(n) = p.normal {
                e.1 += n;
                e.3 = true;
            }
            e.2 += 1;
        }
        let points = cells
            .into_values()
            .map(|(sum, nsum, count, _)| {
                let normal = if with_normals {
                    let len = nsum.norm();
                    Some(if len > 1e-12 { nsum / len } else { Vector3::z() })
                } else {
                    None
                };
                Point {
                    position: sum / count as f64,
                    normal,
                }
            })
            .collect();
        Ok(PointCloud::new(points))
    }

    /// PCA normals oriented toward the origin. See [`estimate_normals_toward`].
    pub fn estimate_normals(&self, radius: f64) -> Result<PointCloud> {
        estimate_normals_toward(self, radius, &Vector3::zeros())
    }
}

/// Fits a plane to each point's radius neighborhood (falling back to the 3
/// nearest neighbors when the ball holds fewer than 3 points) and takes the
/// smallest-eigenvalue eigenvector of the covariance as the normal, flipped
/// so that `n · (viewpoint - p) >= 0`.
pub fn estimate_normals_toward(
    cloud: &PointCloud,
    radius: f64,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be > 0, got {radius}")));
    }
    if cloud.len() < 3 {
        return Err(Error::Degenerate("normals need at least 3 points".into()));
    }
    let first = cloud.points[0].position;
    if cloud.positions().all(|p| *p == first) {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let tree = cloud.kdtree();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let mut nbrs: Vec<usize> = tree
                .within_radius(&p.position, radius)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            if nbrs.len() < 3 {
                nbrs = tree.knn(&p.position, 3.min(cloud.len()));
            }
            let normal = plane_normal(cloud, &nbrs);
            let oriented = if normal.dot(&(viewpoint - p.position)) < 0.0 {
                -normal
            } else {
                normal
            };
            Point {
                position: p.position,
                normal: Some(oriented),
            }
        })
        .collect();
    Ok(PointCloud::new(points))
}

pub(crate) fn covariance(cloud: &PointCloud, indices: &[usize]) -> Matrix3<f64> {
    let mut mean = Vector3::zeros();
    for &i in indices {
        mean += cloud.points[i].position;
    }
    mean /= indices.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = cloud.points[i].position - mean;
        cov += d * d.transpose();
    }
    cov / indices.len() as f64
}

fn plane_normal(cloud: &PointCloud, indices: &[usize]) -> Vector3<f64> {
    let eig = SymmetricEigen::new(covariance(cloud, indices));
    let (mut best, mut best_val) = (0, f64::INFINITY);
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        if *v < best_val {
            best_val = *v;
            best = i;
        }
    }
    let n = eig.eigenvectors.column(best).into_owned();
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vector3::z()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_positions(
            (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())),
        )
    }

    #[test]
    fn resolution_of_lattice_and_pair() {
        let lattice = PointCloud::from_positions((0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)));
        assert_eq!(lattice.average_resolution().unwrap(), 1.0);
        let pair = PointCloud::from_positions([Vector3::zeros(), Vector3::new(0.0, 0.5, 0.0)]);
        assert_eq!(pair.average_resolution().unwrap(), 0.5);
        let single = PointCloud::from_positions([Vector3::zeros()]);
        assert!(single.average_resolution().is_err());
    }

    #[test]
    fn resolution_matches_brute_force() {
        let cloud = random_cloud(1000, 1);
        let mut sum = 0.0;
        for (i, p) in cloud.positions().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in cloud.positions().enumerate() {
                if i != j {
                    let dx = q.x - p.x;
                    let dy = q.y - p.y;
                    let dz = q.z - p.z;
                    best = best.min(dx * dx + dy * dy + dz * dz);
                }
            }
            sum += best.sqrt();
        }
        assert_eq!(cloud.average_resolution().unwrap(), sum / 1000.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let cloud = PointCloud::from_positions([Vector3::x()]);
        let pose = RigidPose::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let out = cloud.transform(&pose);
        assert!((out.position(0) - Vector3::y()).norm() < 1e-9);
    }

    #[test]
    fn transform_roundtrip() {
        let cloud = random_cloud(50, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = RigidPose::random(&mut rng, 3.0, 1.0);
        let back = cloud.transform(&pose).transform(&pose.inverse());
        for (a, b) in cloud.positions().zip(back.positions()) {
            assert!((a - b).norm() < 1e-9);
        }
        let same = cloud.transform(&RigidPose::identity());
        assert_eq!(same.points(), cloud.points());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let cloud = PointCloud::from_positions((0..10_000).map(|_| Vector3::zeros()));
        assert_eq!(cloud.add_gaussian_noise(0.0, 1).unwrap().points(), cloud.points());
        let a = cloud.add_gaussian_noise(0.01, 7).unwrap();
        let b = cloud.add_gaussian_noise(0.01, 7).unwrap();
        assert_eq!(a.points(), b.points());
        for axis in 0..3 {
            let vals: Vec<f64> = a.positions().map(|p| p[axis]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.009..=0.011).contains(&std), "axis {axis} std {std}");
        }
    }

    #[test]
    fn voxel_cases() {
        let cloud = random_cloud(100, 3);
        let one = cloud.voxel_downsample(10.0).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.position(0) - cloud.centroid()).norm() < 1e-12);

        let two = PointCloud::from_positions([Vector3::new(0.1, 0.1, 0.1), Vector3::new(1.1, 0.1, 0.1)]);
        assert_eq!(two.voxel_downsample(1.0).unwrap().len(), 2);

        let edge = 0.8;
        let mut corners = Vec::new();
        for x in [0.0, edge] {
            for y in [0.0, edge] {
                for z in [0.0, edge] {
                    corners.push(Vector3::new(x, y, z));
                }
            }
        }
        let cube = PointCloud::from_positions(corners);
        assert_eq!(cube.voxel_downsample(edge / 2.0).unwrap().len(), 8);
    }

    #[test]
    fn knn_rejects_large_k() {
        let cloud = random_cloud(5, 0);
        assert!(cloud.knn(&Vector3::zeros(), 6).is_err());
        let all = cloud.knn(&Vector3::zeros(), 5).unwrap();
        assert_eq!(all.len(), 5);
        let q = *cloud.position(3);
        assert_eq!(cloud.knn(&q, 1).unwrap(), vec![3]);
    }

    #[test]
    fn planar_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = PointCloud::from_positions(
            (0..100).map(|_| Vector3::new(rng.random(), rng.random(), 0.0)),
        );
        let out = cloud.estimate_normals(0.3).unwrap();
        for p in out.points() {
            let n = p.normal.unwrap();
            assert!((n.z.abs() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sphere_normals_point_to_viewpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = PointCloud::from_positions((0..400).map(|_| {
            let v = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            v / v.norm()
        }));
        let out = cloud.estimate_normals(0.4).unwrap();
        for p in out.points() {
            let n = p.normal.unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!(n.dot(&(-p.position)) > 0.0);
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let cloud = PointCloud::from_positions((0..10).map(|_| Vector3::new(1.0, 1.0, 1.0)));
        assert!(cloud.estimate_normals(0.1).is_err());
    }
}
