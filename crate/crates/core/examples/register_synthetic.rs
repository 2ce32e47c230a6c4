//! Registers synthetic posed scene pairs and reports pose errors with and
//! without ICP.
//!
//! cargo run --release --example register_synthetic -- <model.ckpt> [pairs] [sigma]

use std::path::Path;
use std::time::Instant;

use graphite::model::load_checkpoint;
use graphite::registration::{aggregate_errors, register_clouds, RegisterConfig};
use graphite::synthgen::{generate_pose_pair, PosePairConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> graphite::Result<()> {
    let ckpt: String = arg(1, String::from("model.ckpt"));
    let pairs: usize = arg(2, 50);
    let sigma: f64 = arg(3, 0.0);
    let model = load_checkpoint(Path::new(&ckpt))?;
    let start = Instant::now();

    let cfg = RegisterConfig::objects();
    let test_cfg = PosePairConfig {
        noise_sigma: sigma,
        ..PosePairConfig::default()
    };
    let mut raw = Vec::new();
    let mut refined = Vec::new();
    let mut improved = 0;
    for i in 0..pairs as u64 {
        let pair = generate_pose_pair(i, &test_cfg)?;
        let reg = match register_clouds(&model, &pair.p, &pair.q, &cfg) {
            Ok(r) => r,
            Err(e) => {
                println!("pair {i}: {e}");
                continue;
            }
        };
        let est = reg.result.pose;
        let icp = *reg.result.final_pose();
        let a = est.rotation_error_deg(&pair.pose);
        let b = icp.rotation_error_deg(&pair.pose);
        if b <= a + 1e-9 {
            improved += 1;
        }
        println!(
            "pair {i:>3}  matches {:>3}  inliers {:>3}  rot {a:8.3}  icp {b:8.3}",
            reg.matches.len(),
            reg.result.inliers.len()
        );
        raw.push((est, pair.pose));
        refined.push((icp, pair.pose));
    }
    let r = aggregate_errors(&raw)?;
    let f = aggregate_errors(&refined)?;
    println!(
        "rot MAE {:.3}  icp rot MAE {:.3}  trans MAE cm {:.3} / {:.3}  icp<=raw {improved}/{}  ({:.1}s)",
        r.rot_mae,
        f.rot_mae,
        r.trans_mae,
        f.trans_mae,
        raw.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
