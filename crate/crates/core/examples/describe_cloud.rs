//! Describes random patches of a scene with a model and shows how the score
//! threshold filters them and how descriptors separate.
//!
//! cargo run --release --example describe_cloud -- [model.ckpt] [threshold]

use std::path::Path;

use graphite::model::load_checkpoint;
use graphite::registration::{describe_cloud, DescribeConfig};
use graphite::synthgen::{generate_pose_pair, PosePairConfig};
use graphite::GraphiteModel;

fn main() -> graphite::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let model = match args.get(1) {
        Some(p) => load_checkpoint(Path::new(p))?,
        None => GraphiteModel::init(0),
    };
    let threshold: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let pair = generate_pose_pair(3, &PosePairConfig::default())?;
    let cfg = DescribeConfig { patch_size: 64, num_patches: 200, ..DescribeConfig::default() };

    let all = describe_cloud(&model, &pair.p, &cfg)?;
    let kept = describe_cloud(&model, &pair.p, &DescribeConfig { score_threshold: Some(threshold), ..cfg })?;
    println!("{} patches described, {} with score >= {threshold}", all.len(), kept.len());

    let mut by_score: Vec<_> = all.iter().collect();
    by_score.sort_by(|a, b| b.score.total_cmp(&a.score));
    for f in by_score.iter().take(5) {
        println!("score {:.3}  keypoint {:?}", f.score, f.keypoint.as_slice());
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut dists = Vec::new();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            dists.push(d(&a.descriptor, &b.descriptor));
        }
    }
    dists.sort_by(f64::total_cmp);
    println!(
        "descriptor distances: min {:.3}  median {:.3}  max {:.3}",
        dists[0],
        dists[dists.len() / 2],
        dists[dists.len() - 1]
    );
    Ok(())
}
