//! Generates posed scene pairs, writes them, reloads them and checks that the
//! stored correspondences agree with the stored pose.
//!
//! cargo run --release --example pose_pairs -- [out_dir] [count] [sigma]

use std::path::PathBuf;

use graphite::synthgen::{build_pose_pairs, load_pose_pairs, PosePairConfig};

fn main() -> graphite::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("graphite_pairs"));
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let sigma: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let cfg = PosePairConfig { noise_sigma: sigma, ..PosePairConfig::default() };
    build_pose_pairs(count, &out, 11, &cfg)?;

    for (i, pair) in load_pose_pairs(&out)?.iter().enumerate() {
        let residual = pair
            .correspondences
            .iter()
            .map(|&(p, q)| (pair.pose.apply(pair.p.position(p)) - pair.q.position(q)).norm())
            .sum::<f64>()
            / pair.correspondences.len() as f64;
        println!(
            "pair {i}  points {:>4}  rotation {:>6.2} deg  translation {:.3}  mean correspondence residual {residual:.4}",
            pair.p.len(),
            pair.pose.rotation_angle().to_degrees(),
            pair.pose.translation().norm()
        );
    }
    Ok(())
}
