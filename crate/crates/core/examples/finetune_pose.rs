//! Stage-2 fine-tuning on noisy posed pairs, anchored to the starting model,
//! with a resumable checkpoint after every epoch.
//!
//! cargo run --release --example finetune_pose -- <stage1.ckpt> [pairs] [epochs] [out.ckpt]

use std::path::Path;
use std::time::Instant;

use graphite::model::load_checkpoint;
use graphite::synthgen::{generate_pose_pair, PosePairConfig};
use graphite::training::{pose_triplets, Stage, TrainConfig, Trainer, TrainingData};
use rayon::prelude::*;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> graphite::Result<()> {
    let start_ckpt: String = arg(1, String::from("stage1.ckpt"));
    let pairs: u64 = arg(2, 200);
    let epochs: usize = arg(3, 10);
    let out: String = arg(4, String::from("stage2.ckpt"));
    let start = Instant::now();

    let cfg = PosePairConfig { noise_sigma: 0.01, ..PosePairConfig::default() };
    let train_pairs = (0..pairs)
        .into_par_iter()
        .map(|i| generate_pose_pair(1_000_000 + i, &cfg))
        .collect::<graphite::Result<Vec<_>>>()?;
    let config = TrainConfig { epochs: Some(epochs), ..TrainConfig::for_stage(Stage::Pose) };
    let model = load_checkpoint(Path::new(&start_ckpt))?;
    let (samples, skipped) = pose_triplets(&model.config, &train_pairs, &config)?;
    println!("{} triplets ({skipped} patches without overlap skipped)", samples.len());
    let data = TrainingData::Poses { samples, skipped };

    let mut trainer = Trainer::new(model, config)?;
    while trainer.epoch < epochs {
        let log = trainer.run_epoch(&data)?;
        let n = log.len() as f64;
        let mean = |f: fn(&graphite::training::LossParts) -> f64| log.iter().map(|r| f(&r.losses)).sum::<f64>() / n;
        println!(
            "epoch {:>3}  total {:.4}  descriptor {:.4}  values {:.5}  score {:.5}  ({:.0}s)",
            trainer.epoch,
            mean(|l| l.total),
            mean(|l| l.descriptor),
            mean(|l| l.values),
            mean(|l| l.score),
            start.elapsed().as_secs_f64()
        );
        trainer.checkpoint().save(Path::new(&out))?;
    }
    println!("saved {out}");
    Ok(())
}
