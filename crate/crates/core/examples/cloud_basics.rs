//! Point-cloud plumbing: sample a scene, write and reload it as XYZ and PLY,
//! downsample, re-estimate normals and query the kd-tree.
//!
//! cargo run --release --example cloud_basics -- [out_dir]

use std::path::PathBuf;

use graphite::pointcloud::{load_cloud, save_cloud, CloudFormat};
use graphite::synthgen::{ComposedScene, SceneConfig};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> graphite::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = ComposedScene::random(&mut rng, &SceneConfig::default());
    let cloud = scene.sample(5000, &mut rng);
    println!("sampled {} points, resolution {:.4}", cloud.len(), cloud.average_resolution()?);

    for (name, format) in [("scene.xyz", CloudFormat::Xyz), ("scene.ply", CloudFormat::PlyAscii)] {
        let path = out.join(name);
        save_cloud(&cloud, &path, format)?;
        let back = load_cloud(&path, format)?;
        println!("{}: {} points, identical {}", path.display(), back.len(), back.points() == cloud.points());
    }

    let coarse = cloud.voxel_downsample(0.05)?;
    let renormed = coarse.estimate_normals(0.15)?;
    println!("voxel 0.05: {} points, normals re-estimated {}", coarse.len(), renormed.has_normals());

    let query = Vector3::new(0.5, 0.5, 0.0);
    let near = cloud.kdtree().knn_with_dist2(&query, 5);
    for (i, d2) in near {
        println!("neighbor {i:>5}  dist {:.4}  at {:?}", d2.sqrt(), cloud.position(i).as_slice());
    }
    Ok(())
}
