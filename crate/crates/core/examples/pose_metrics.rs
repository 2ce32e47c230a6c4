//! Pose error statistics and registration recall on hand-made estimates.
//!
//! cargo run --release --example pose_metrics

use graphite::registration::{aggregate_errors, pose_errors, pose_residuals, registration_recall, CorrespondenceSet};
use graphite::RigidPose;
use nalgebra::Vector3;

fn main() -> graphite::Result<()> {
    let gt = RigidPose::from_euler_zyx(0.3, -0.2, 0.5, Vector3::new(0.1, 0.0, -0.2));
    let estimates = [
        gt,
        RigidPose::from_axis_angle(Vector3::z(), 2f64.to_radians(), Vector3::zeros()).compose(&gt),
        RigidPose::from_translation(Vector3::new(0.01, 0.0, 0.0)).compose(&gt),
    ];
    for (i, e) in estimates.iter().enumerate() {
        let (rot, trans) = pose_residuals(e, &gt);
        let m = pose_errors(e, &gt);
        println!(
            "estimate {i}: euler residual deg {rot:.3?}  translation residual cm {trans:.3?}  rot MAE {:.3}  trans MAE {:.3}",
            m.rot_mae, m.trans_mae
        );
    }
    let all: Vec<_> = estimates.iter().map(|e| (*e, gt)).collect();
    println!("aggregate: {:?}", aggregate_errors(&all)?);

    // corners of a 1 m cube as ground-truth correspondences
    let corners: CorrespondenceSet = (0..8)
        .map(|k| {
            let p = Vector3::new((k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64);
            (p, gt.apply(&p))
        })
        .collect();
    let sets = vec![corners; estimates.len()];
    for tau1 in [0.005, 0.02, 0.05] {
        println!("recall at tau1 {tau1}: {:.3}", registration_recall(&estimates, &sets, tau1, 0.5)?);
    }
    Ok(())
}
