use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::pointcloud::RigidPose;

/// Error statistics over the three Euler-angle residuals (degrees) and the
/// three translation residuals (centimeters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseErrors {
    pub rot_mse: f64,
    pub rot_rmse: f64,
    pub rot_mae: f64,
    pub trans_mse: f64,
    pub trans_rmse: f64,
    pub trans_mae: f64,
}

/// Residual rotation `R_gt^T R_est` as ZYX Euler angles `(roll, pitch, yaw)`
/// in degrees, and residual translation `R_gt^T (t_est - t_gt)` in
/// centimeters; together the components of `gt^-1 * est`.
pub fn pose_residuals(estimated: &RigidPose, ground_truth: &RigidPose) -> ([f64; 3], [f64; 3]) {
    let res = ground_truth.inverse().compose(estimated);
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*res.rotation()).euler_angles();
    let t: Vector3<f64> = res.translation() * 100.0;
    ([roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()], [t.x, t.y, t.z])
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mse = values.iter().map(|v| v * v).sum::<f64>() / n;
    let mae = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    (mse, mse.sqrt(), mae)
}

pub fn pose_errors(estimated: &RigidPose, ground_truth: &RigidPose) -> PoseErrors {
    aggregate_errors(&[(*estimated, *ground_truth)]).expect("one pair")
}

/// Statistics over all components of all `(estimated, ground truth)` pairs.
pub fn aggregate_errors(pairs: &[(RigidPose, RigidPose)]) -> Result<PoseErrors> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no poses to evaluate".into()));
    }
    let mut rot = Vec::with_capacity(3 * pairs.len());
    let mut trans = Vec::with_capacity(3 * pairs.len());
    for (e, g) in pairs {
        let (r, t) = pose_residuals(e, g);
        rot.extend(r);
        trans.extend(t);
    }
    let (rot_mse, rot_rmse, rot_mae) = stats(&rot);
    let (trans_mse, trans_rmse, trans_mae) = stats(&trans);
    Ok(PoseErrors {
        rot_mse,
        rot_rmse,
        rot_mae,
        trans_mse,
        trans_rmse,
        trans_mae,
    })
}

/// Ground-truth point correspondences `(p, q)` for one cloud pair.
pub type CorrespondenceSet = Vec<(Vector3<f64>, Vector3<f64>)>;

/// Fraction of `correspondences` whose residual under `estimate` is strictly
/// below `tau1`.
pub fn inlier_fraction(estimate: &RigidPose, correspondences: &CorrespondenceSet, tau1: f64) -> f64 {
    if correspondences.is_empty() {
        return 0.0;
    }
    let hits = correspondences
        .iter()
        .filter(|(p, q)| (estimate.apply(p) - q).norm() < tau1)
        .count();
    hits as f64 / correspondences.len() as f64
}

/// Share of pairs whose estimated pose brings more than `tau2` of the
/// ground-truth correspondences within `tau1`.
pub fn registration_recall(estimates: &[RigidPose], correspondences: &[CorrespondenceSet], tau1: f64, tau2: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no registrations to evaluate".into()));
    }
    if estimates.len() != correspondences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} correspondence sets",
            estimates.len(),
            correspondences.len()
        )));
    }
    let recalled = estimates
        .iter()
        .zip(correspondences)
        .filter(|(e, c)| inlier_fraction(e, c, tau1) > tau2)
        .count();
    Ok(recalled as f64 / estimates.len() as f64)
}

/// Recall thresholds commonly used for scene fragments: 10 cm and 5 %.
pub const RECALL_TAU1: f64 = 0.1;
pub const RECALL_TAU2: f64 = 0.05;
