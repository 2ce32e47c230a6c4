//! Two-stage training: supervised initialization on labeled synthetic corners,
//! then fine-tuning on posed cloud pairs with warped value consistency and the
//! descriptor triplet loss, anchored to a frozen copy of the starting model.

mod data;
mod step;
mod warp;

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, GraphiteModel};
use crate::nn::Adam;
use crate::synthgen::derive_seed;

pub use data::{
    corner_triplets, keypoint_accuracy, pose_triplets, split_holdout, triplet_accuracy, TrainingData, TripletLabels,
    TripletSample,
};
pub use step::{batch_gradient, stage1_step, stage2_step, LossParts, StepReport};
pub use warp::{warp_values, WarpMap, WarpRow, WARP_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Supervised values, scores and descriptors on labeled corners.
    Init,
    /// Descriptor metric learning plus cross-view value consistency.
    Pose,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Pose => "pose",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Stage::Init),
            "pose" => Ok(Stage::Pose),
            _ => Err(Error::Config(format!("unknown stage `{s}` (expected init or pose)"))),
        }
    }
}

/// How the negative of a triplet is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMining {
    /// A uniformly random other instance (stage 1) or a random distant patch
    /// (stage 2).
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub batch_size: usize,
    /// Total epochs; defaults to 30 for `init` and 20 for `pose`.
    pub epochs: Option<usize>,
    /// Weight of the negative distance in the triplet ratio.
    pub margin: f64,
    pub seed: u64,
    pub lambda_descriptor: f64,
    pub lambda_values: f64,
    pub lambda_score: f64,
    pub negative_mining: NegativeMining,
    /// Neighbors used when warping values between views.
    pub warp_k: usize,
    /// Warped points farther than this from any target point are dropped.
    pub warp_max_distance: f64,
    /// Points per patch for posed pairs.
    pub pose_patch_size: usize,
    pub patches_per_pair: usize,
    /// Minimum distance between a stage-2 anchor and its negative patch seed.
    pub negative_min_distance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Init,
            lr: 1e-3,
            batch_size: 32,
            epochs: None,
            margin: 1.0,
            seed: 0,
            lambda_descriptor: 1.0,
            lambda_values: 1.0,
            lambda_score: 1.0,
            negative_mining: NegativeMining::Random,
            warp_k: 3,
            warp_max_distance: 0.05,
            pose_patch_size: crate::patching::OBJECT_PATCH_SIZE,
            patches_per_pair: 16,
            negative_min_distance: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            ..Self::default()
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.stage {
            Stage::Init => 30,
            Stage::Pose => 20,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("margin", self.margin),
            ("lambda_descriptor", self.lambda_descriptor),
            ("lambda_values", self.lambda_values),
            ("lambda_score", self.lambda_score),
            ("warp_max_distance", self.warp_max_distance),
            ("negative_min_distance", self.negative_min_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("warp_k", self.warp_k),
            ("pose_patch_size", self.pose_patch_size),
            ("patches_per_pair", self.patches_per_pair),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One optimizer step as written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub losses: LossParts,
    pub lr: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.losses;
        write!(
            f,
            "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.step, l.total, l.descriptor, l.values, l.score, self.lr
        )
    }
}

pub const LOG_HEADER: &str = "step\tloss_total\tloss_D\tloss_V\tloss_S\tlr";

/// Model and optimizer state between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: GraphiteModel,
    /// Frozen copy of the model a stage-2 run started from; its reference
    /// values and scores are the stage-2 targets.
    pub teacher: Option<GraphiteModel>,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: GraphiteModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: Adam::new(config.lr),
            teacher: (config.stage == Stage::Pose).then(|| model.clone()),
            model,
            epoch: 0,
            config,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut optimizer = checkpoint.optimizer.unwrap_or_else(|| Adam::new(config.lr));
        optimizer.lr = config.lr;
        let teacher = match (config.stage, checkpoint.teacher) {
            (Stage::Init, _) => None,
            (Stage::Pose, Some(params)) => Some(GraphiteModel {
                config: checkpoint.model.config.clone(),
                params,
            }),
            // a stage-2 run starting from a plain model anchors to it
            (Stage::Pose, None) => Some(checkpoint.model.clone()),
        };
        Ok(Self {
            teacher,
            model: checkpoint.model,
            optimizer,
            epoch: checkpoint.epoch,
            config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            optimizer: Some(self.optimizer.clone()),
            teacher: self.teacher.as_ref().map(|t| t.params.clone()),
        }
    }

    /// Order in which an epoch visits the samples; depends only on the seed
    /// and the epoch number, so resumed runs replay it exactly.
    pub fn epoch_order(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, epoch as u64)));
        order
    }

    pub fn run_epoch(&mut self, data: &TrainingData) -> Result<Vec<LogRecord>> {
        if data.stage() != self.config.stage {
            return Err(Error::Dataset(format!(
                "{} data given to a {} training run",
                data.stage().name(),
                self.config.stage.name()
            )));
        }
        let samples = data.samples();
        if samples.is_empty() {
            return Err(Error::Dataset("no training samples".into()));
        }
        let order = self.epoch_order(samples.len(), self.epoch);
        let per_epoch = order.len().div_ceil(self.config.batch_size) as u64;
        let mut log = Vec::with_capacity(per_epoch as usize);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&TripletSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let report = match self.config.stage {
                Stage::Init => stage1_step(&mut self.model, &mut self.optimizer, &batch, &self.config)?,
                Stage::Pose => stage2_step(
                    &mut self.model,
                    self.teacher.as_ref(),
                    &mut self.optimizer,
                    &batch,
                    &self.config,
                )?,
            };
            log.push(LogRecord {
                step: self.epoch as u64 * per_epoch + b as u64 + 1,
                losses: report.losses,
                lr: self.optimizer.lr,
            });
        }
        self.epoch += 1;
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<LogRecord>,
}

/// Runs the trainer up to the configured epoch count, writing a checkpoint
/// with optimizer state after every epoch when `checkpoint` is given.
pub fn train_from(mut trainer: Trainer, data: &TrainingData, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    let mut log = Vec::new();
    while trainer.epoch < trainer.config.epochs() {
        log.extend(trainer.run_epoch(data)?);
        if let Some(path) = checkpoint {
            trainer.checkpoint().save(path)?;
        }
    }
    Ok(TrainOutcome { trainer, log })
}

pub fn train(
    model: GraphiteModel,
    data: &TrainingData,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    train_from(Trainer::new(model, config.clone())?, data, checkpoint)
}
