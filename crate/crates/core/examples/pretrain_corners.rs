//! Stage-1 pretraining on in-memory synthetic corners with a held-out split.
//!
//! cargo run --release --example pretrain_corners -- [pairs] [epochs] [seed] [lr] [out.ckpt]

use std::time::Instant;

use graphite::synthgen::{generate_instance, CornerDatasetConfig};
use graphite::training::{
    corner_triplets, keypoint_accuracy, split_holdout, triplet_accuracy, TrainConfig, Trainer, TrainingData,
};
use graphite::model::save_checkpoint;
use graphite::{GraphiteModel, ModelConfig};
use rayon::prelude::*;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> graphite::Result<()> {
    let pairs: usize = arg(1, 400);
    let epochs: usize = arg(2, 10);
    let seed: u64 = arg(3, 1);
    let lr: f64 = arg(4, 1e-3);
    let out: Option<String> = std::env::args().nth(5);
    let model_cfg = ModelConfig::default();

    let start = Instant::now();
    let cfg = CornerDatasetConfig::default();
    let samples = (0..pairs)
        .into_par_iter()
        .map(|id| generate_instance(id, pairs, seed, &cfg)?.sample())
        .collect::<graphite::Result<Vec<_>>>()?;
    let triplets = corner_triplets(&model_cfg, &samples)?;
    let (train_idx, test_idx) = split_holdout(triplets.len(), 0.1, seed);
    let train = TrainingData::Corners(train_idx.iter().map(|&i| triplets[i].clone()).collect());
    let test: Vec<_> = test_idx.iter().map(|&i| triplets[i].clone()).collect();
    println!("generated {pairs} pairs in {:.1}s", start.elapsed().as_secs_f64());

    let config = TrainConfig {
        seed,
        lr,
        epochs: Some(epochs),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(GraphiteModel::new(model_cfg, seed)?, config)?;
    for _ in 0..epochs {
        let log = trainer.run_epoch(&train)?;
        let mean = log.iter().map(|r| r.losses.total).sum::<f64>() / log.len() as f64;
        println!(
            "epoch {:>3}  loss {mean:.4}  keypoint acc {:.3}  triplet acc {:.3}  ({:.1}s)",
            trainer.epoch,
            keypoint_accuracy(&trainer.model, &test)?,
            triplet_accuracy(&trainer.model, &test)?,
            start.elapsed().as_secs_f64()
        );
    }
    if let Some(path) = out {
        save_checkpoint(&trainer.model, std::path::Path::new(&path))?;
        println!("saved {path}");
    }
    Ok(())
}
