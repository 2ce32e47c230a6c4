//! Cuts a scene into patches and reports the radius graphs built on them in
//! both local frames.
//!
//! cargo run --release --example patch_graphs -- [patch_size] [patches]

use graphite::graph::UNREACHABLE;
use graphite::model::Frame;
use graphite::patching::{extract_patches, PatchSeeds};
use graphite::synthgen::{ComposedScene, SceneConfig};
use graphite::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> graphite::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = ComposedScene::random(&mut rng, &SceneConfig::default()).sample(4000, &mut rng);
    let patches = extract_patches(&cloud, size, &PatchSeeds::Random { count, seed: 1 })?;

    for frame in [Frame::Centered, Frame::Pca] {
        let config = ModelConfig { frame, ..ModelConfig::default() };
        println!("frame {}", frame.name());
        for (i, patch) in patches.iter().enumerate() {
            let g = config.graph(patch)?;
            let degree = g.degree().iter().sum::<f64>() / g.len() as f64;
            let hops = g.shortest_hops(0)?;
            let reachable = hops.iter().filter(|&&h| h != UNREACHABLE).count();
            let depth = hops.iter().filter(|&&h| h != UNREACHABLE).max().unwrap_or(&0);
            println!(
                "  patch {i:>2}  nodes {:>3}  edges {:>5}  radius {:.3}  mean weighted degree {degree:.2}  reachable {reachable}/{}  depth {depth}",
                g.len(),
                g.edge_count(),
                g.radius_used(),
                g.len()
            );
        }
    }
    Ok(())
}
