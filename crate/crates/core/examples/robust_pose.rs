//! Recovers a pose from correspondences with outliers: Kabsch on everything,
//! RANSAC, then ICP over the full clouds.
//!
//! cargo run --release --example robust_pose -- [outlier_fraction]

use graphite::registration::{icp_refine, kabsch, ransac_pose, IcpConfig, Match, RansacConfig};
use graphite::synthgen::{generate_pose_pair, PosePairConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> graphite::Result<()> {
    let outliers: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.7);
    let pair = generate_pose_pair(21, &PosePairConfig { noise_sigma: 0.005, ..PosePairConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // 100 correspondences, a share of them pointing at random target points
    let mut kp = Vec::new();
    let mut kq = Vec::new();
    for &(p, q) in pair.correspondences.iter().take(100) {
        kp.push(*pair.p.position(p));
        let q = if rng.random_bool(outliers) { rng.random_range(0..pair.q.len()) } else { q };
        kq.push(*pair.q.position(q));
    }
    let naive = kabsch(&kp, &kq)?;
    let matches: Vec<Match> = (0..kp.len()).map(|i| Match { index_p: i, index_q: i, distance: 0.0 }).collect();
    let robust = ransac_pose(&matches, &kp, &kq, &RansacConfig::default())?;
    let refined = icp_refine(&pair.p, &pair.q, &robust.pose, &IcpConfig::default())?;

    let show = |name: &str, pose: &graphite::RigidPose| {
        println!(
            "{name:<8} rotation err {:>8.4} deg  translation err {:.4}",
            pose.rotation_error_deg(&pair.pose),
            pose.translation_error(&pair.pose)
        );
    };
    show("kabsch", &naive);
    show("ransac", &robust.pose);
    show("icp", &refined.pose);
    println!(
        "ransac inliers {}/{}  icp iterations {}  rms {:.5} -> {:.5}",
        robust.inliers.len(),
        kp.len(),
        refined.residuals.len() - 1,
        refined.residuals[0],
        refined.residuals[refined.residuals.len() - 1]
    );
    Ok(())
}
