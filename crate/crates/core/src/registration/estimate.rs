use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Match;
use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, RigidPose};
use crate::synthgen::derive_seed;

/// Relative size below which the second principal spread of the source points
/// counts as zero (collinear input).
const COLLINEAR_TOL: f64 = 1e-10;

/// Least-squares rigid transform taking `source[i]` onto `target[i]`
/// (cross-covariance SVD with reflection correction).
pub fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidPose> {
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source points, {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate("rigid fit needs at least 3 pairs".into()));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        h += ds * (t - ct).transpose();
        spread += ds * ds.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut ev = [sv[0], sv[1], sv[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > COLLINEAR_TOL * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("correspondences are collinear".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    RigidPose::new(r, ct - r * cs)
}

/// Outcome of robust pose estimation and optional refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: RigidPose,
    pub inliers: Vec<Match>,
    pub icp_refined: Option<RigidPose>,
    pub metrics: Option<super::PoseErrors>,
}

impl RegistrationResult {
    /// The refined pose when available, else the robust estimate.
    pub fn final_pose(&self) -> &RigidPose {
        self.icp_refined.as_ref().unwrap_or(&self.pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Maximum keypoint residual of an inlier, in cloud units.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            inlier_threshold: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    iteration: usize,
    inliers: usize,
    rms: f64,
}

impl Hypothesis {
    /// More inliers, then lower RMS, then earlier iteration.
    fn better_than(&self, o: &Hypothesis) -> bool {
        if self.inliers != o.inliers {
            return self.inliers > o.inliers;
        }
        if self.rms != o.rms {
            return self.rms < o.rms;
        }
        self.iteration < o.iteration
    }
}

fn score(pose: &RigidPose, pairs: &[(Vector3<f64>, Vector3<f64>)], thresh2: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sum = 0.0;
    for (p, q) in pairs {
        let r2 = (pose.apply(p) - q).norm_squared();
        if r2 < thresh2 {
            count += 1;
            sum += r2;
        }
    }
    let rms = if count > 0 { (sum / count as f64).sqrt() } else { f64::INFINITY };
    (count, rms)
}

/// Samples minimal 3-match sets, keeps the Kabsch pose with the most inliers
/// (ties: lower inlier RMS), and refits on all of its inliers.
///
/// Matches are put in `(index_p, index_q)` order before sampling and every
/// iteration draws from its own seed, so the result does not depend on the
/// input order or on the number of threads.
pub fn ransac_pose(
    matches: &[Match],
    keypoints_p: &[Vector3<f64>],
    keypoints_q: &[Vector3<f64>],
    cfg: &RansacConfig,
) -> Result<RegistrationResult> {
    if matches.len() < 3 {
        return Err(Error::Degenerate(format!("RANSAC needs >= 3 matches, got {}", matches.len())));
    }
    let mut canonical = matches.to_vec();
    canonical.sort_by_key(|m| (m.index_p, m.index_q));
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = canonical
        .iter()
        .map(|m| {
            let p = keypoints_p.get(m.index_p).copied();
            let q = keypoints_q.get(m.index_q).copied();
            p.zip(q)
                .ok_or_else(|| Error::InvalidInput(format!("match ({}, {}) out of range", m.index_p, m.index_q)))
        })
        .collect::<Result<_>>()?;
    let thresh2 = cfg.inlier_threshold * cfg.inlier_threshold;

    let hypothesis = |i: usize| -> Option<(Hypothesis, RigidPose)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let pick = sample(&mut rng, pairs.len(), 3);
        let src: Vec<_> = pick.iter().map(|k| pairs[k].0).collect();
        let dst: Vec<_> = pick.iter().map(|k| pairs[k].1).collect();
        let pose = kabsch(&src, &dst).ok()?;
        let (inliers, rms) = score(&pose, &pairs, thresh2);
        Some((
            Hypothesis {
                iteration: i,
                inliers,
                rms,
            },
            pose,
        ))
    };
    let pick_best = |a: Option<(Hypothesis, RigidPose)>, b: Option<(Hypothesis, RigidPose)>| match (a, b) {
        (Some(a), Some(b)) => Some(if b.0.better_than(&a.0) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    };
    let best = (0..cfg.iterations)
        .into_par_iter()
        .map(hypothesis)
        .reduce(|| None, pick_best)
        .ok_or_else(|| Error::Degenerate("no non-degenerate minimal sample".into()))?;

    let mut pose = best.1;
    let inlier_idx = |pose: &RigidPose| -> Vec<usize> {
        (0..pairs.len())
            .filter(|&k| (pose.apply(&pairs[k].0) - pairs[k].1).norm_squared() < thresh2)
            .collect()
    };
    let mut inliers = inlier_idx(&pose);
    if inliers.len() >= 3 {
        let src: Vec<_> = inliers.iter().map(|&k| pairs[k].0).collect();
        let dst: Vec<_> = inliers.iter().map(|&k| pairs[k].1).collect();
        if let Ok(refit) = kabsch(&src, &dst) {
            let (count, _) = score(&refit, &pairs, thresh2);
            if count >= inliers.len() {
                pose = refit;
                inliers = inlier_idx(&pose);
            }
        }
    }
    Ok(RegistrationResult {
        pose,
        inliers: inliers.into_iter().map(|k| canonical[k]).collect(),
        icp_refined: None,
        metrics: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the RMS residual improves by less than this.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-9,
        }
    }
}

/// Refined pose and the RMS nearest-neighbor residual before the first and
/// after every accepted iteration (non-increasing).
#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub pose: RigidPose,
    pub residuals: Vec<f64>,
}

fn nn_pairs(source: &PointCloud, target: &PointCloud, pose: &RigidPose) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, f64) {
    let tree = target.kdtree();
    let moved: Vec<Vector3<f64>> = source.positions().map(|p| pose.apply(p)).collect();
    let near: Vec<(usize, f64)> = moved
        .par_iter()
        .map(|p| tree.nearest(p).expect("target is not empty"))
        .collect();
    let rms = (near.iter().map(|n| n.1).sum::<f64>() / near.len() as f64).sqrt();
    let src = source.positions().copied().collect();
    let dst = near.iter().map(|&(j, _)| *target.position(j)).collect();
    (src, dst, rms)
}

/// Point-to-point ICP over all points of both clouds, starting from `init`.
/// An iteration that would raise the residual is rejected and ends the loop.
pub fn icp_refine(source: &PointCloud, target: &PointCloud, init: &RigidPose, cfg: &IcpConfig) -> Result<IcpOutcome> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut pose = *init;
    let (mut src, mut dst, mut rms) = nn_pairs(source, target, &pose);
    let mut residuals = vec![rms];
    for _ in 0..cfg.max_iterations {
        let Ok(next) = kabsch(&src, &dst) else { break };
        let (s2, d2, r2) = nn_pairs(source, target, &next);
        if r2 > rms {
            break;
        }
        let gain = rms - r2;
        pose = next;
        (src, dst, rms) = (s2, d2, r2);
        residuals.push(rms);
        if gain < cfg.tolerance {
            break;
        }
    }
    Ok(IcpOutcome { pose, residuals })
}
