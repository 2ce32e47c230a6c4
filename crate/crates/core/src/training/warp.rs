//! Carrying per-point values from one view of a surface to another.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::{KdTree, PointCloud, RigidPose};

/// Keeps a zero distance from producing an infinite weight.
pub const WARP_EPS: f64 = 1e-12;

/// One target point and the normalized inverse-distance weights of the source
/// points it interpolates from.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpRow {
    pub target: usize,
    pub sources: Vec<(usize, f64)>,
}

/// A sparse linear map from source values to target values. Every row's
/// weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarpMap {
    pub rows: Vec<WarpRow>,
}

impl WarpMap {
    /// Transforms `source` by `pose`, collects the `k` nearest `target` points
    /// of every moved source point (ignoring any farther than
    /// `max_distance`), and gives each collected target point weights over its
    /// own `k` nearest moved source points. Rows are sorted by target index.
    pub fn build(
        source: &[Vector3<f64>],
        target: &PointCloud,
        pose: &RigidPose,
        k: usize,
        max_distance: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("warp k must be >= 1".into()));
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let moved: Vec<Vector3<f64>> = source.iter().map(|p| pose.apply(p)).collect();
        let max2 = max_distance * max_distance;
        let mut members = std::collections::BTreeSet::new();
        let tree = target.kdtree();
        for p in &moved {
            for (j, d2) in tree.knn_with_dist2(p, k) {
                if d2 <= max2 {
                    members.insert(j);
                }
            }
        }
        if members.is_empty() {
            return Err(Error::Degenerate("no target point lies near the warped source".into()));
        }
        let source_tree = KdTree::build(moved.iter());
        let rows = members
            .into_iter()
            .map(|j| {
                let near = source_tree.knn_with_dist2(target.position(j), k);
                let w: Vec<f64> = near.iter().map(|&(_, d2)| 1.0 / (WARP_EPS + d2.sqrt())).collect();
                let total: f64 = w.iter().sum();
                WarpRow {
                    target: j,
                    sources: near.iter().zip(&w).map(|(&(i, _), &wi)| (i, wi / total)).collect(),
                }
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Interpolated value for every row.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.sources.iter().map(|&(i, w)| w * values[i]).sum())
            .collect()
    }

    /// Gradient on the source values given a gradient on every row's output.
    pub fn backward(&self, upstream: &[f64], source_len: usize) -> Vec<f64> {
        let mut g = vec![0.0; source_len];
        for (r, &u) in self.rows.iter().zip(upstream) {
            for &(i, w) in &r.sources {
                g[i] += w * u;
            }
        }
        g
    }

    /// Keeps only rows whose target appears in `members`, renumbering targets
    /// to positions in `members`.
    pub fn restrict(&self, members: &[usize]) -> Self {
        let pos: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut rows: Vec<WarpRow> = self
            .rows
            .iter()
            .filter_map(|r| {
                pos.get(&r.target).map(|&t| WarpRow {
                    target: t,
                    sources: r.sources.clone(),
                })
            })
            .collect();
        rows.sort_by_key(|r| r.target);
        Self { rows }
    }
}

/// Values of `source` carried onto the points of `target` near its warped
/// image, as `(target index, value)` sorted by index.
pub fn warp_values(
    source: &[Vector3<f64>],
    values: &[f64],
    target: &PointCloud,
    pose: &RigidPose,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if values.len() != source.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} source points",
            values.len(),
            source.len()
        )));
    }
    let map = WarpMap::build(source, target, pose, k, f64::INFINITY)?;
    Ok(map.rows.iter().map(|r| r.target).zip(map.apply(values)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{sample_height_field, Domain};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, step: f64) -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                v.push(Vector3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        v
    }

    #[test]
    fn identical_sampling_reproduces_values() {
        let src = grid(8, 0.1);
        let pose = RigidPose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(0.3, -0.1, 2.0));
        let q = PointCloud::from_positions(src.iter().map(|p| pose.apply(p)));
        let values: Vec<f64> = (0..src.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = warp_values(&src, &values, &q, &pose, 3).unwrap();
        assert_eq!(out.len(), src.len());
        for (j, v) in out {
            assert!((v - values[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_field_stays_constant() {
        let src = grid(6, 0.1);
        let q = PointCloud::from_positions(grid(9, 0.07));
        let out = warp_values(&src, &vec![0.42; src.len()], &q, &RigidPose::identity(), 3).unwrap();
        for (_, v) in out {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_field_survives_resampling() {
        // two independent samplings of the same square carry v(x) = x across
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flat = |_: f64, _: f64| (0.0, Vector3::z());
        let a = sample_height_field(&flat, Domain::Square { half: 0.5 }, 2500, &mut rng);
        let b = sample_height_field(&flat, Domain::Square { half: 0.5 }, 2500, &mut rng);
        let b = PointCloud::from_positions(b.into_iter().map(|(p, _)| p));
        let spacing = 1.0 / 2500f64.sqrt();
        let src: Vec<Vector3<f64>> = a.into_iter().map(|(p, _)| p).collect();
        let values: Vec<f64> = src.iter().map(|p| p.x).collect();
        let out = warp_values(&src, &values, &b, &RigidPose::identity(), 3).unwrap();
        let mut errors: Vec<f64> = out.iter().map(|&(j, v)| (v - b.position(j).x).abs()).collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[errors.len() / 2] < spacing);
        assert!(errors[errors.len() * 99 / 100] < 2.0 * spacing, "{}", errors[errors.len() * 99 / 100]);
    }

    #[test]
    fn far_target_is_a_correspondence_failure() {
        let src = grid(3, 0.1);
        let q = PointCloud::from_positions(grid(3, 0.1).into_iter().map(|p| p + Vector3::new(10.0, 0.0, 0.0)));
        assert!(WarpMap::build(&src, &q, &RigidPose::identity(), 3, 1.0).is_err());
        assert!(WarpMap::build(&src, &q, &RigidPose::identity(), 0, 1.0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let src = grid(4, 0.1);
        let q = PointCloud::from_positions(grid(5, 0.08));
        let map = WarpMap::build(&src, &q, &RigidPose::identity(), 3, f64::INFINITY).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..src.len()).map(|_| rng.random()).collect();
        let up: Vec<f64> = (0..map.len()).map(|_| rng.random()).collect();
        let g = map.backward(&up, src.len());
        for i in 0..src.len() {
            let f = |h: f64| {
                let mut v = values.clone();
                v[i] += h;
                map.apply(&v).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = crate::nn::gradcheck::central_difference(f);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn restrict_renumbers_targets() {
        let src = grid(3, 0.1);
        let q = PointCloud::from_positions(grid(3, 0.1));
        let map = WarpMap::build(&src, &q, &RigidPose::identity(), 1, f64::INFINITY).unwrap();
        let sub = map.restrict(&[8, 0]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.rows[0].target, 0);
        assert_eq!(sub.rows[0].sources[0].0, 8);
        assert_eq!(sub.rows[1].sources[0].0, 0);
    }

    proptest! {
        #[test]
        fn warped_values_stay_in_source_range(
            seed in 0u64..1000,
            k in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<Vector3<f64>> = (0..40)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let q = PointCloud::from_positions(
                (0..60).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())),
            );
            let values: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..3.0)).collect();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pose = RigidPose::random(&mut rng, 1.0, 0.2);
            for (_, v) in warp_values(&src, &values, &q, &pose, k).unwrap() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            let map = WarpMap::build(&src, &q, &pose, k, f64::INFINITY).unwrap();
            for r in &map.rows {
                let s: f64 = r.sources.iter().map(|s| s.1).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
