//! Fixed-size local patches and their local reference frame.
//!
//! A patch is the `n` nearest cloud points to a seed location. Its local frame
//! subtracts the patch centroid and divides by the patch radius. No rotation is
//! applied here; [`align_principal_axes`] optionally rotates the local rows
//! onto the patch's own axes.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Patch size used for scene-scale data.
pub const SCENE_PATCH_SIZE: usize = 225;
/// Patch size used for object-scale data.
pub const OBJECT_PATCH_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Indices into the parent cloud; duplicates appear only for resampled
    /// multi-scale patches.
    pub indices: Vec<usize>,
    /// Location the patch was grown around, parent frame.
    pub seed: Vector3<f64>,
    /// Mean of the member positions, parent frame.
    pub centroid: Vector3<f64>,
    /// Largest member distance from the centroid.
    pub scale: f64,
    /// Rows of `(x, y, z, a, b, c)`: normalized local position and unit normal.
    pub local_points: Vec<[f64; 6]>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Maps a local-frame position back to the parent frame.
    pub fn to_parent(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.centroid + local * self.scale
    }

    pub fn local_position(&self, node: usize) -> Vector3<f64> {
        let r = &self.local_points[node];
        Vector3::new(r[0], r[1], r[2])
    }

    /// Copy with rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Patch {
        Patch {
            indices: order.iter().map(|&i| self.indices[i]).collect(),
            local_points: order.iter().map(|&i| self.local_points[i]).collect(),
            ..self.clone()
        }
    }
}

/// Where patches are grown.
#[derive(Debug, Clone)]
pub enum PatchSeeds {
    /// `count` cloud points drawn uniformly (without replacement when possible).
    Random { count: usize, seed: u64 },
    /// Explicit coordinates, e.g. benchmark-provided keypoint locations.
    Explicit(Vec<Vector3<f64>>),
}

fn seed_positions(cloud: &PointCloud, seeds: &PatchSeeds) -> Result<Vec<Vector3<f64>>> {
    match seeds {
        PatchSeeds::Explicit(v) => Ok(v.clone()),
        PatchSeeds::Random { count, seed } => {
            if *count == 0 {
                return Err(Error::InvalidInput("num_patches must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let idx: Vec<usize> = if *count <= cloud.len() {
                sample(&mut rng, cloud.len(), *count).into_vec()
            } else {
                (0..*count).map(|_| rng.random_range(0..cloud.len())).collect()
            };
            Ok(idx.into_iter().map(|i| *cloud.position(i)).collect())
        }
    }
}

/// The `n` nearest cloud points to every seed, in distance order.
pub fn patch_members(
    cloud: &PointCloud,
    n: usize,
    seeds: &PatchSeeds,
) -> Result<Vec<(Vector3<f64>, Vec<usize>)>> {
    if n == 0 {
        return Err(Error::InvalidInput("patch size must be >= 1".into()));
    }
    if cloud.len() < n {
        return Err(Error::InvalidInput(format!(
            "cloud has {} points, fewer than patch size {n}",
            cloud.len()
        )));
    }
    let tree = cloud.kdtree();
    Ok(seed_positions(cloud, seeds)?
        .into_iter()
        .map(|s| (s, tree.knn(&s, n)))
        .collect())
}

/// Grows patches around the seeds and expresses each in its local frame.
pub fn extract_patches(cloud: &PointCloud, n: usize, seeds: &PatchSeeds) -> Result<Vec<Patch>> {
    patch_members(cloud, n, seeds)?
        .into_iter()
        .map(|(seed, indices)| local_frame(cloud, indices, seed))
        .collect()
}

/// Multi-scale training patches: around every random seed, neighborhoods of
/// `n/2`, `n` and `2n` points, each resampled to exactly `n` points (random
/// subset when larger, random duplicates when smaller).
pub fn extract_multiscale_patches(
    cloud: &PointCloud,
    n: usize,
    num_seeds: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    let big = (2 * n).min(cloud.len());
    let members = patch_members(
        cloud,
        big,
        &PatchSeeds::Random {
            count: num_seeds,
            seed,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    let mut out = Vec::with_capacity(members.len() * 3);
    for (s, ordered) in members {
        for m in [(n / 2).max(1), n, big] {
            let base = &ordered[..m.min(ordered.len())];
            let indices = resample(base, n, &mut rng);
            out.push(local_frame(cloud, indices, s)?);
        }
    }
    Ok(out)
}

fn resample(base: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if base.len() == n {
        return base.to_vec();
    }
    if base.len() > n {
        let mut picked: Vec<usize> = sample(rng, base.len(), n)
            .into_iter()
            .map(|i| base[i])
            .collect();
        picked.sort_unstable();
        return picked;
    }
    let mut out = base.to_vec();
    while out.len() < n {
        out.push(base[rng.random_range(0..base.len())]);
    }
    out
}

/// Rotation whose rows are the patch's principal axes, largest spread first.
/// Signs are fixed from the data: the smallest axis points along the summed
/// normals and the largest axis along the positive third moment of the
/// positions (each falling back to the third moment or +1 when the sum
/// vanishes). Sums run in the canonical node order so the result does not
/// depend on row order.
pub fn principal_axes(rows: &[[f64; 6]]) -> Matrix3<f64> {
    let order = crate::graph::canonical_order(rows);
    let pos = |j: usize| Vector3::new(rows[j][0], rows[j][1], rows[j][2]);
    let mut mean = Vector3::zeros();
    for &j in &order {
        mean += pos(j);
    }
    mean /= rows.len().max(1) as f64;
    let mut cov = Matrix3::zeros();
    for &j in &order {
        let d = pos(j) - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| -> Vector3<f64> { eig.eigenvectors.column(idx[k]).into_owned() };
    let third_moment = |a: &Vector3<f64>| order.iter().map(|&j| (pos(j) - mean).dot(a).powi(3)).sum::<f64>();
    let flip = |a: Vector3<f64>, s: f64| if s < 0.0 { -a } else { a };
    let z = axis(2);
    let normal_sum: f64 = order.iter().map(|&j| Vector3::new(rows[j][3], rows[j][4], rows[j][5]).dot(&z)).sum();
    let z = if normal_sum.abs() > 1e-9 * rows.len() as f64 {
        flip(z, normal_sum)
    } else {
        flip(z, third_moment(&z))
    };
    let x = axis(0);
    let x = flip(x, third_moment(&x));
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Local rows expressed in the patch's principal axes (see [`principal_axes`]).
/// Distances between rows are unchanged.
pub fn align_principal_axes(rows: &[[f64; 6]]) -> Vec<[f64; 6]> {
    let r = principal_axes(rows);
    rows.iter()
        .map(|v| {
            let p = r * Vector3::new(v[0], v[1], v[2]);
            let n = r * Vector3::new(v[3], v[4], v[5]);
            [p.x, p.y, p.z, n.x, n.y, n.z]
        })
        .collect()
}

/// Builds a patch from explicit member indices, e.g. a stored patch whose file
/// holds exactly its members.
pub fn patch_from_indices(cloud: &PointCloud, indices: Vec<usize>, seed: Vector3<f64>) -> Result<Patch> {
    local_frame(cloud, indices, seed)
}

/// Recomputes the local frame of `patch` from its parent cloud.
pub fn to_local_frame(cloud: &PointCloud, patch: &Patch) -> Result<Patch> {
    local_frame(cloud, patch.indices.clone(), patch.seed)
}

fn local_frame(cloud: &PointCloud, indices: Vec<usize>, seed: Vector3<f64>) -> Result<Patch> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty patch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::InvalidInput(format!("patch index {bad} out of range")));
    }
    // accumulate in ascending parent-index order so the frame does not depend
    // on member order
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    let mut centroid = Vector3::zeros();
    for &i in &sorted {
        centroid += cloud.position(i);
    }
    centroid /= sorted.len() as f64;
    let scale = sorted
        .iter()
        .map(|&i| (cloud.position(i) - centroid).norm())
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("all patch points coincide".into()));
    }
    let local_points = indices
        .iter()
        .map(|&i| {
            let p = &cloud.points()[i];
            let n = p.normal.ok_or_else(|| {
                Error::InvalidInput("patch points must carry normals".into())
            })?;
            let l = (p.position - centroid) / scale;
            Ok([l.x, l.y, l.z, n.x, n.y, n.z])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Patch {
        indices,
        seed,
        centroid,
        scale,
        local_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point;
    use rand::seq::SliceRandom;

    fn cloud_with_normals(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point {
                    position: Vector3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.1),
                    normal: Some(Vector3::z()),
                })
                .collect(),
        )
    }

    #[test]
    fn whole_cloud_patch() {
        let cloud = cloud_with_normals(30, 1);
        let patches = extract_patches(&cloud, 30, &PatchSeeds::Random { count: 1, seed: 0 }).unwrap();
        let mut idx = patches[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn explicit_seeds() {
        let cloud = cloud_with_normals(200, 2);
        let seeds = vec![Vector3::new(0.1, 0.1, 0.0), Vector3::new(0.5, 0.5, 0.0), Vector3::new(0.9, 0.2, 0.0)];
        let patches = extract_patches(&cloud, 16, &PatchSeeds::Explicit(seeds.clone())).unwrap();
        assert_eq!(patches.len(), 3);
        for (p, s) in patches.iter().zip(&seeds) {
            assert_eq!(p.seed, *s);
            assert_eq!(p.len(), 16);
        }
    }

    #[test]
    fn too_small_cloud() {
        let cloud = cloud_with_normals(10, 3);
        assert!(extract_patches(&cloud, 11, &PatchSeeds::Random { count: 1, seed: 0 }).is_err());
    }

    #[test]
    fn local_frame_invariants() {
        let cloud = cloud_with_normals(500, 4);
        let patches = extract_patches(&cloud, 64, &PatchSeeds::Random { count: 10, seed: 5 }).unwrap();
        for p in &patches {
            let mut mean = [0.0; 3];
            let mut max_norm: f64 = 0.0;
            for r in &p.local_points {
                for k in 0..3 {
                    mean[k] += r[k] / p.len() as f64;
                }
                max_norm = max_norm.max((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt());
            }
            assert!(mean.iter().all(|m| m.abs() < 1e-6));
            assert!(max_norm <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn centered_unit_patch_is_unchanged() {
        let pts = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        ];
        let cloud = PointCloud::new(
            pts.iter()
                .map(|p| Point { position: *p, normal: Some(Vector3::z()) })
                .collect(),
        );
        let patch = extract_patches(&cloud, 4, &PatchSeeds::Explicit(vec![Vector3::zeros()])).unwrap();
        for (row, &i) in patch[0].local_points.iter().zip(&patch[0].indices) {
            let p = pts[i];
            assert!((row[0] - p.x).abs() < 1e-9 && (row[1] - p.y).abs() < 1e-9 && (row[2] - p.z).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_and_scale_invariance() {
        let pts = [
            Vector3::new(0.3, 0.1, 0.0),
            Vector3::new(-0.2, 0.4, 0.1),
            Vector3::new(0.0, -0.5, 0.2),
            Vector3::new(0.7, 0.2, -0.1),
        ];
        let make = |f: &dyn Fn(Vector3<f64>) -> Vector3<f64>| {
            PointCloud::new(
                pts.iter()
                    .map(|p| Point { position: f(*p), normal: Some(Vector3::new(0.0, 0.6, 0.8)) })
                    .collect(),
            )
        };
        let base = make(&|p| p);
        let patch = Patch {
            indices: vec![0, 1, 2, 3],
            seed: Vector3::zeros(),
            centroid: Vector3::zeros(),
            scale: 0.0,
            local_points: Vec::new(),
        };
        let a = to_local_frame(&base, &patch).unwrap();
        // hand computation: centroid (0.2, 0.05, 0.05); farthest member is
        // point 2 at |(-0.2, -0.55, 0.15)| = sqrt(0.365)
        let s = 0.365f64.sqrt();
        assert!((a.scale - s).abs() < 1e-12);
        assert!((a.local_points[3][0] - 0.5 / s).abs() < 1e-12);
        assert!((a.local_points[0][1] - 0.05 / s).abs() < 1e-12);

        let shifted = to_local_frame(&make(&|p| p + Vector3::new(5.0, 5.0, 5.0)), &patch).unwrap();
        for (r, q) in a.local_points.iter().zip(&shifted.local_points) {
            for k in 0..6 {
                assert!((r[k] - q[k]).abs() < 1e-12);
            }
        }
        let scaled = to_local_frame(&make(&|p| p * 2.0), &patch).unwrap();
        assert_eq!(a.local_points, scaled.local_points);
    }

    #[test]
    fn seeded_extraction_is_reproducible() {
        let cloud = cloud_with_normals(300, 6);
        let s = PatchSeeds::Random { count: 5, seed: 42 };
        assert_eq!(extract_patches(&cloud, 20, &s).unwrap(), extract_patches(&cloud, 20, &s).unwrap());
    }

    #[test]
    fn multiscale_patches_have_fixed_size() {
        let cloud = cloud_with_normals(400, 7);
        let patches = extract_multiscale_patches(&cloud, 32, 4, 9).unwrap();
        assert_eq!(patches.len(), 12);
        assert!(patches.iter().all(|p| p.len() == 32));
    }

    fn skewed_rows(seed: u64) -> Vec<[f64; 6]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..80)
            .map(|_| {
                let u: f64 = rng.random();
                let p = Vector3::new(0.9 * u * u, 0.5 * rng.random_range(-1.0..1.0), 0.2 * rng.random_range(-1.0..1.0));
                let n = Vector3::new(0.3 * rng.random_range(-1.0..1.0), 0.2, 1.0).normalize();
                [p.x, p.y, p.z, n.x, n.y, n.z]
            })
            .collect()
    }

    fn rotate_rows(rows: &[[f64; 6]], r: &Matrix3<f64>) -> Vec<[f64; 6]> {
        rows.iter()
            .map(|v| {
                let p = r * Vector3::new(v[0], v[1], v[2]);
                let n = r * Vector3::new(v[3], v[4], v[5]);
                [p.x, p.y, p.z, n.x, n.y, n.z]
            })
            .collect()
    }

    #[test]
    fn principal_axes_are_a_proper_rotation() {
        let rows = skewed_rows(1);
        let r = principal_axes(&rows);
        assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let aligned = align_principal_axes(&rows);
        for (a, b) in [(0, 1), (5, 40), (17, 63)] {
            let d0 = (Vector3::from_row_slice(&rows[a][..3]) - Vector3::from_row_slice(&rows[b][..3])).norm();
            let d1 = (Vector3::from_row_slice(&aligned[a][..3]) - Vector3::from_row_slice(&aligned[b][..3])).norm();
            assert!((d0 - d1).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_rows_ignore_patch_orientation() {
        let rows = skewed_rows(2);
        let base = align_principal_axes(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = crate::pointcloud::RigidPose::random(&mut rng, std::f64::consts::PI, 0.0);
            let turned = align_principal_axes(&rotate_rows(&rows, pose.rotation()));
            for (a, b) in base.iter().zip(&turned) {
                for k in 0..6 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn aligned_rows_permute_exactly() {
        let rows = skewed_rows(4);
        let base = align_principal_axes(&rows);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let shuffled: Vec<_> = order.iter().map(|&i| rows[i]).collect();
        let aligned = align_principal_axes(&shuffled);
        for (new, &old) in order.iter().enumerate() {
            assert_eq!(aligned[new], base[old]);
        }
    }
}
