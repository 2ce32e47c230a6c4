//! Command-line front end. Each subcommand reads its settings from its
//! section of an optional TOML file (`--config`), then applies flag
//! overrides. `--print-config` prints the merged settings in the same format,
//! so a printed file reproduces the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Checkpoint, GraphiteModel, ModelConfig};
use crate::pointcloud::{load_cloud, CloudFormat, PointCloud, RigidPose};
use crate::registration::{
    aggregate_errors, describe_cloud, features_to_text, inlier_fraction, register_clouds, save_features,
    CorrespondenceSet, DescribeConfig, IcpConfig, RansacConfig, RegisterConfig, RECALL_TAU1, RECALL_TAU2,
};
use crate::synthgen::{build_dataset, build_pose_pairs, load_pose_pairs, CornerDatasetConfig, PosePairConfig};
use crate::training::{train_from, Stage, TrainConfig, Trainer, TrainingData, LOG_HEADER};

#[derive(Debug, Parser)]
#[command(name = "graphite", version, about = "Graph patch features for point-cloud registration")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with [synthgen], [model], [train], [describe], [register] and
    /// [eval_recall] sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the merged configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled corner dataset or posed cloud pairs.
    Synthgen(SynthgenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Describe random patches of a cloud.
    Describe(DescribeArgs),
    /// Estimate the pose taking one cloud onto another.
    Register(RegisterArgs),
    /// Register every pair of a pose-pair dataset and report recall and pose errors.
    EvalRecall(EvalRecallArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Labeled corner patch pairs for the init stage.
    #[default]
    Corners,
    /// Posed composed-primitive cloud pairs for the pose stage and evaluation.
    PosePairs,
}

#[derive(Debug, Args)]
pub struct SynthgenArgs {
    /// Output directory.
    pub out: PathBuf,
    #[arg(long)]
    pub kind: Option<DatasetKind>,
    /// Number of instances or pairs.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian noise on pose-pair targets, meters.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Largest pose-pair rotation about each axis, degrees.
    #[arg(long)]
    pub max_angle: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synthgen`.
    pub data: PathBuf,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stage: Option<Stage>,
    /// Starting model; a fresh one from [model] and the seed otherwise.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue a run from a checkpoint with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Tab-separated per-step loss log (appended to on resume).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ValueEnum for Stage {
    fn value_variants<'a>() -> &'a [Self] {
        &[Stage::Init, Stage::Pose]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct PatchArgs {
    /// Points per patch.
    #[arg(short = 'n', long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub num_patches: Option<usize>,
    /// Drop patches scoring below this; 0 keeps all.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Seed for choosing patch centers.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    pub checkpoint: PathBuf,
    /// Cloud file (.xyz, .txt or ASCII .ply).
    pub cloud: PathBuf,
    /// Feature file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub patch: PatchArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub patch: PatchArgs,
    /// Refine with point-to-point ICP.
    #[arg(long)]
    pub icp: bool,
    #[arg(long)]
    pub icp_max_iterations: Option<usize>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    /// RANSAC inlier distance, cloud units.
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    #[arg(long)]
    pub ransac_seed: Option<u64>,
    /// Keep one-way nearest-neighbor matches too.
    #[arg(long)]
    pub no_mutual: bool,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub checkpoint: PathBuf,
    /// Source cloud.
    pub cloud_p: PathBuf,
    /// Target cloud.
    pub cloud_q: PathBuf,
    /// Ground-truth pose file; adds error lines to the output.
    #[arg(long)]
    pub gt_pose: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalRecallArgs {
    pub checkpoint: PathBuf,
    /// Pose-pair dataset directory.
    pub data: PathBuf,
    /// Correspondence distance threshold, cloud units.
    #[arg(long)]
    pub tau1: Option<f64>,
    /// Required share of correspondences within `tau1`.
    #[arg(long)]
    pub tau2: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthgenSection {
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
    pub corners: CornerDatasetConfig,
    pub pose_pairs: PosePairConfig,
}

impl Default for SynthgenSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Corners,
            count: 100,
            seed: 0,
            corners: CornerDatasetConfig::default(),
            pose_pairs: PosePairConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub patch_size: usize,
    pub num_patches: usize,
    /// 0 keeps every patch.
    pub score_threshold: f64,
    pub seed: u64,
    pub normal_radius_multiplier: f64,
}

impl PatchSection {
    fn from_config(d: &DescribeConfig) -> Self {
        Self {
            patch_size: d.patch_size,
            num_patches: d.num_patches,
            score_threshold: d.score_threshold.unwrap_or(0.0),
            seed: d.seed,
            normal_radius_multiplier: d.normal_radius_multiplier,
        }
    }

    pub fn to_config(&self) -> DescribeConfig {
        DescribeConfig {
            patch_size: self.patch_size,
            num_patches: self.num_patches,
            score_threshold: (self.score_threshold > 0.0).then_some(self.score_threshold),
            seed: self.seed,
            normal_radius_multiplier: self.normal_radius_multiplier,
        }
    }

    fn apply(&mut self, a: &PatchArgs) {
        set(&mut self.patch_size, a.patch_size);
        set(&mut self.num_patches, a.num_patches);
        set(&mut self.score_threshold, a.score_threshold);
        set(&mut self.seed, a.seed);
    }
}

impl Default for PatchSection {
    fn default() -> Self {
        Self::from_config(&DescribeConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterSection {
    pub patch_size: usize,
    pub num_patches: usize,
    /// 0 keeps every patch.
    pub score_threshold: f64,
    pub seed: u64,
    pub normal_radius_multiplier: f64,
    pub mutual: bool,
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    pub ransac_seed: u64,
    pub icp: bool,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
}

impl Default for RegisterSection {
    fn default() -> Self {
        let r = RegisterConfig::default();
        let p = PatchSection::from_config(&r.describe);
        let icp = IcpConfig::default();
        Self {
            patch_size: p.patch_size,
            num_patches: p.num_patches,
            score_threshold: p.score_threshold,
            seed: p.seed,
            normal_radius_multiplier: p.normal_radius_multiplier,
            mutual: r.mutual,
            ransac_iterations: r.ransac.iterations,
            inlier_threshold: r.ransac.inlier_threshold,
            ransac_seed: r.ransac.seed,
            icp: r.icp.is_some(),
            icp_max_iterations: icp.max_iterations,
            icp_tolerance: icp.tolerance,
        }
    }
}

impl RegisterSection {
    pub fn to_config(&self) -> RegisterConfig {
        let describe = PatchSection {
            patch_size: self.patch_size,
            num_patches: self.num_patches,
            score_threshold: self.score_threshold,
            seed: self.seed,
            normal_radius_multiplier: self.normal_radius_multiplier,
        }
        .to_config();
        RegisterConfig {
            describe,
            mutual: self.mutual,
            ransac: RansacConfig {
                iterations: self.ransac_iterations,
                inlier_threshold: self.inlier_threshold,
                seed: self.ransac_seed,
            },
            icp: self.icp.then_some(IcpConfig {
                max_iterations: self.icp_max_iterations,
                tolerance: self.icp_tolerance,
            }),
        }
    }

    fn apply(&mut self, a: &PipelineArgs) {
        set(&mut self.patch_size, a.patch.patch_size);
        set(&mut self.num_patches, a.patch.num_patches);
        set(&mut self.score_threshold, a.patch.score_threshold);
        set(&mut self.seed, a.patch.seed);
        set(&mut self.ransac_iterations, a.ransac_iterations);
        set(&mut self.inlier_threshold, a.inlier_threshold);
        set(&mut self.ransac_seed, a.ransac_seed);
        set(&mut self.icp_max_iterations, a.icp_max_iterations);
        self.icp |= a.icp;
        self.mutual &= !a.no_mutual;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallSection {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for RecallSection {
    fn default() -> Self {
        Self {
            tau1: RECALL_TAU1,
            tau2: RECALL_TAU2,
        }
    }
}

/// Settings for every subcommand; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synthgen: SynthgenSection,
    /// Architecture of freshly initialized models.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub describe: PatchSection,
    pub register: RegisterSection,
    pub eval_recall: RecallSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies the flags of `command` to its section.
    pub fn apply(&mut self, command: &Command) {
        match command {
            Command::Synthgen(a) => {
                let s = &mut self.synthgen;
                set(&mut s.kind, a.kind);
                set(&mut s.count, a.count);
                set(&mut s.seed, a.seed);
                set(&mut s.pose_pairs.noise_sigma, a.noise_sigma);
                set(&mut s.pose_pairs.max_angle_deg, a.max_angle);
            }
            Command::Train(a) => {
                let t = &mut self.train;
                set(&mut t.stage, a.stage);
                if a.epochs.is_some() {
                    t.epochs = a.epochs;
                }
                set(&mut t.lr, a.lr);
                set(&mut t.batch_size, a.batch_size);
                set(&mut t.seed, a.seed);
            }
            Command::Describe(a) => self.describe.apply(&a.patch),
            Command::Register(a) => self.register.apply(&a.pipeline),
            Command::EvalRecall(a) => {
                self.register.apply(&a.pipeline);
                set(&mut self.eval_recall.tau1, a.tau1);
                set(&mut self.eval_recall.tau2, a.tau2);
            }
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Process exit status for an error: 2 usage or configuration, 3 data, 4
/// numerical failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Degenerate(_) => 4,
        _ => 3,
    }
}

/// Parses `args` (program name first) and runs the command, writing results
/// to `out`.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> std::result::Result<(), RunError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(RunError::Clap)?;
    run(&cli, out).map_err(RunError::Pipeline)
}

#[derive(Debug)]
pub enum RunError {
    Clap(clap::Error),
    Pipeline(Error),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Clap(e) if !e.use_stderr() => 0,
            RunError::Clap(_) => 2,
            RunError::Pipeline(e) => exit_code(e),
        }
    }
}

/// Entry point of the `graphite` binary.
pub fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match run_args(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                RunError::Clap(c) => {
                    let _ = c.print();
                }
                RunError::Pipeline(p) => eprintln!("error: {p}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&cli.command);
    if cli.print_config {
        return emit(out, &config.to_toml());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let text = pool.install(|| match &cli.command {
        Command::Synthgen(a) => cmd_synthgen(a, &config),
        Command::Train(a) => cmd_train(a, &config),
        Command::Describe(a) => cmd_describe(a, &config),
        Command::Register(a) => cmd_register(a, &config),
        Command::EvalRecall(a) => cmd_eval_recall(a, &config),
    })?;
    emit(out, &text)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    let cloud = load_cloud(path, CloudFormat::from_path(path)?)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud)
}

fn cmd_synthgen(a: &SynthgenArgs, c: &RunConfig) -> Result<String> {
    let s = &c.synthgen;
    let manifest = match s.kind {
        DatasetKind::Corners => build_dataset(s.count, &a.out, s.seed, &s.corners)?,
        DatasetKind::PosePairs => build_pose_pairs(s.count, &a.out, s.seed, &s.pose_pairs)?,
    };
    Ok(format!(
        "kind {}\ncount {}\nseed {}\nout {}\n",
        manifest.kind,
        manifest.rows.len(),
        s.seed,
        a.out.display()
    ))
}

fn cmd_train(a: &TrainArgs, c: &RunConfig) -> Result<String> {
    let config = c.train.clone();
    config.validate()?;
    let trainer = match (&a.resume, &a.init) {
        (Some(path), _) => Trainer::resume(Checkpoint::load(path)?, config)?,
        (None, Some(path)) => Trainer::new(load_checkpoint(path)?, config)?,
        (None, None) => Trainer::new(GraphiteModel::new(c.model.clone(), config.seed)?, config)?,
    };
    let data = TrainingData::load(&a.data, &trainer.model.config, &trainer.config)?;
    let start_epoch = trainer.epoch;
    let outcome = train_from(trainer, &data, Some(&a.out))?;
    let t = &outcome.trainer;
    t.checkpoint().save(&a.out)?;
    if let Some(path) = &a.log {
        write_log(path, &outcome.log, a.resume.is_some())?;
    }
    if let Some(bad) = outcome.log.iter().find(|r| !r.losses.total.is_finite()) {
        return Err(Error::Degenerate(format!("loss became {} at step {}", bad.losses.total, bad.step)));
    }
    let per_epoch = data.samples().len().div_ceil(t.config.batch_size);
    let last = outcome.log.iter().rev().take(per_epoch).collect::<Vec<_>>();
    let mut s = String::new();
    let _ = writeln!(s, "stage {}", t.config.stage.name());
    let _ = writeln!(s, "samples {}", data.samples().len());
    let _ = writeln!(s, "skipped {}", data.skipped());
    let _ = writeln!(s, "epochs_run {}", t.epoch - start_epoch);
    let _ = writeln!(s, "epoch {}", t.epoch);
    if !last.is_empty() {
        let mean = last.iter().map(|r| r.losses.total).sum::<f64>() / last.len() as f64;
        let _ = writeln!(s, "last_epoch_loss {mean:?}");
    }
    let _ = writeln!(s, "checkpoint {}", a.out.display());
    Ok(s)
}

fn write_log(path: &Path, log: &[crate::training::LogRecord], append: bool) -> Result<()> {
    let mut text = String::new();
    let existing = append && path.exists();
    if !existing {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    for r in log {
        let _ = writeln!(text, "{r}");
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(existing)
        .truncate(!existing)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn cmd_describe(a: &DescribeArgs, c: &RunConfig) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let cloud = read_cloud(&a.cloud)?;
    let features = describe_cloud(&model, &cloud, &c.describe.to_config())?;
    match &a.out {
        Some(path) => {
            save_features(&features, path)?;
            Ok(format!("features {}\nout {}\n", features.len(), path.display()))
        }
        None => Ok(features_to_text(&features)),
    }
}

fn cmd_register(a: &RegisterArgs, c: &RunConfig) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let p = read_cloud(&a.cloud_p)?;
    let q = read_cloud(&a.cloud_q)?;
    let gt = a.gt_pose.as_deref().map(RigidPose::load).transpose()?;
    let mut reg = register_clouds(&model, &p, &q, &c.register.to_config())?;
    if let Some(gt) = &gt {
        reg.evaluate(gt);
    }
    Ok(reg.to_text())
}

fn cmd_eval_recall(a: &EvalRecallArgs, c: &RunConfig) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let pairs = load_pose_pairs(&a.data)?;
    if pairs.is_empty() {
        return Err(Error::Dataset("no pose pairs".into()));
    }
    let cfg = c.register.to_config();
    let (tau1, tau2) = (c.eval_recall.tau1, c.eval_recall.tau2);
    // pairs run one after another; each registration is parallel inside
    let results: Vec<Option<RigidPose>> = pairs
        .iter()
        .map(|pair| match register_clouds(&model, &pair.p, &pair.q, &cfg) {
            Ok(r) => Ok(Some(*r.result.final_pose())),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let recalled = pairs
        .par_iter()
        .zip(&results)
        .filter(|(pair, est)| {
            est.is_some_and(|e| {
                let set: CorrespondenceSet = pair
                    .correspondences
                    .iter()
                    .map(|&(i, j)| (*pair.p.position(i), *pair.q.position(j)))
                    .collect();
                inlier_fraction(&e, &set, tau1) > tau2
            })
        })
        .count();
    let estimated: Vec<(RigidPose, RigidPose)> = pairs
        .iter()
        .zip(&results)
        .filter_map(|(pair, est)| est.map(|e| (e, pair.pose)))
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, "pairs {}", pairs.len());
    let _ = writeln!(s, "failed {}", pairs.len() - estimated.len());
    let _ = writeln!(s, "recall {:?}", recalled as f64 / pairs.len() as f64);
    if !estimated.is_empty() {
        let m = aggregate_errors(&estimated)?;
        for (k, v) in [
            ("rot_mse", m.rot_mse),
            ("rot_rmse", m.rot_rmse),
            ("rot_mae", m.rot_mae),
            ("trans_mse", m.trans_mse),
            ("trans_rmse", m.trans_rmse),
            ("trans_mae", m.trans_mae),
        ] {
            let _ = writeln!(s, "{k} {v:?}");
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests;
