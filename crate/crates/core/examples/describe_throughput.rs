//! Times the forward pass on 100 scene-size patches on one thread.
//!
//! cargo run --release --example describe_throughput -- [model.ckpt] [patches] [patch_size]

use std::path::Path;
use std::time::Instant;

use graphite::model::load_checkpoint;
use graphite::patching::{extract_patches, PatchSeeds, SCENE_PATCH_SIZE};
use graphite::synthgen::{ComposedScene, SceneConfig};
use graphite::GraphiteModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> graphite::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let model = match args.get(1) {
        Some(p) => load_checkpoint(Path::new(p))?,
        None => GraphiteModel::init(0),
    };
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let size: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(SCENE_PATCH_SIZE);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scene = ComposedScene::random(&mut rng, &SceneConfig::default());
    let cloud = scene.sample(20_000, &mut rng);
    let patches = extract_patches(&cloud, size, &PatchSeeds::Random { count, seed: 2 })?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        let scores = pool.install(|| patches.iter().map(|p| model.describe_patch(p).map(|f| f.score)).collect::<graphite::Result<Vec<_>>>())?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        assert_eq!(scores.len(), count);
        best = best.min(ms);
        println!("{count} patches of {size}: {ms:.1} ms");
    }
    println!("best {best:.1} ms ({:.2} ms per patch)", best / count as f64);
    Ok(())
}
