use std::path::Path;

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Stage, TrainConfig, WarpMap};
use crate::error::{Error, Result};
use crate::graph::{label_values, PatchGraph, ValueLabels};
use crate::model::{GraphiteModel, ModelConfig};
use crate::patching::patch_from_indices;
use crate::synthgen::{
    derive_seed, load_dataset, load_pose_pairs, CornerSample, Manifest, PosePair, CORNER_KIND, POSE_PAIR_KIND,
};

/// Supervision for the reference and positive of a corner triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLabels {
    pub reference: ValueLabels,
    pub positive: ValueLabels,
    pub score: f64,
}

/// Three patch graphs evaluated with shared weights. Corner triplets carry
/// labels; posed triplets carry the warp from reference nodes to positive
/// nodes instead.
#[derive(Debug, Clone)]
pub struct TripletSample {
    pub reference: PatchGraph,
    pub positive: PatchGraph,
    pub negative: PatchGraph,
    pub labels: Option<TripletLabels>,
    pub warp: Option<WarpMap>,
}

#[derive(Debug, Clone)]
pub enum TrainingData {
    Corners(Vec<TripletSample>),
    Poses {
        samples: Vec<TripletSample>,
        /// Patches dropped because no correspondence survived warping.
        skipped: usize,
    },
}

impl TrainingData {
    pub fn stage(&self) -> Stage {
        match self {
            TrainingData::Corners(_) => Stage::Init,
            TrainingData::Poses { .. } => Stage::Pose,
        }
    }

    pub fn samples(&self) -> &[TripletSample] {
        match self {
            TrainingData::Corners(s) => s,
            TrainingData::Poses { samples, .. } => samples,
        }
    }

    pub fn skipped(&self) -> usize {
        match self {
            TrainingData::Corners(_) => 0,
            TrainingData::Poses { skipped, .. } => *skipped,
        }
    }

    /// Loads the dataset at `dir`, which must be of the kind the configured
    /// stage trains on.
    pub fn load(dir: &Path, model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let manifest = Manifest::load(&dir.join("manifest.txt"))?;
        let expected = match cfg.stage {
            Stage::Init => CORNER_KIND,
            Stage::Pose => POSE_PAIR_KIND,
        };
        if manifest.kind != expected {
            return Err(Error::Dataset(format!(
                "stage {} needs a `{expected}` dataset, {} holds `{}`",
                cfg.stage.name(),
                dir.display(),
                manifest.kind
            )));
        }
        match cfg.stage {
            Stage::Init => Ok(TrainingData::Corners(corner_triplets(model, &load_dataset(dir)?)?)),
            Stage::Pose => {
                let (samples, skipped) = pose_triplets(model, &load_pose_pairs(dir)?, cfg)?;
                Ok(TrainingData::Poses { samples, skipped })
            }
        }
    }
}

/// Triplets of (view a, view b, view a of the negative instance) with value
/// labels recomputed on the model's graphs.
pub fn corner_triplets(model: &ModelConfig, samples: &[CornerSample]) -> Result<Vec<TripletSample>> {
    let graphs: Vec<[PatchGraph; 2]> = samples
        .par_iter()
        .map(|s| {
            Ok([
                model.graph(&s.views[0].0)?,
                model.graph(&s.views[1].0)?,
            ])
        })
        .collect::<Result<_>>()?;
    samples
        .iter()
        .zip(&graphs)
        .map(|(s, [a, b])| {
            let neg = samples
                .iter()
                .position(|o| o.id == s.negative)
                .ok_or_else(|| Error::Dataset(format!("instance {} names missing negative {}", s.id, s.negative)))?;
            Ok(TripletSample {
                labels: Some(TripletLabels {
                    reference: label_values(a, s.views[0].1.keypoint_index)?,
                    positive: label_values(b, s.views[1].1.keypoint_index)?,
                    score: s.score,
                }),
                reference: a.clone(),
                positive: b.clone(),
                negative: graphs[neg][0].clone(),
                warp: None,
            })
        })
        .collect()
}

fn pair_triplets(
    model: &ModelConfig,
    pair: &PosePair,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<TripletSample>, usize)> {
    let n = cfg.pose_patch_size;
    if pair.p.len() < n || pair.q.len() < n {
        return Err(Error::Dataset(format!(
            "pair clouds of {} and {} points are smaller than patch size {n}",
            pair.p.len(),
            pair.q.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = cfg.patches_per_pair.min(pair.p.len());
    let seeds = sample(&mut rng, pair.p.len(), count).into_vec();
    let (ptree, qtree) = (pair.p.kdtree(), pair.q.kdtree());
    let mut out = Vec::new();
    let mut skipped = 0;
    for s in seeds {
        let at = *pair.p.position(s);
        let p_members = ptree.knn(&at, n);
        let moved = pair.pose.apply(&at);
        let q_members = qtree.knn(&moved, n);
        let source: Vec<_> = p_members.iter().map(|&i| *pair.p.position(i)).collect();
        let warp = match WarpMap::build(&source, &pair.q, &pair.pose, cfg.warp_k, cfg.warp_max_distance) {
            Ok(w) => w.restrict(&q_members),
            Err(_) => WarpMap::default(),
        };
        if warp.is_empty() {
            skipped += 1;
            continue;
        }
        let far: Vec<usize> = (0..pair.q.len())
            .filter(|&j| (pair.q.position(j) - moved).norm() > cfg.negative_min_distance)
            .collect();
        let neg_at = match far.choose(&mut rng) {
            Some(&j) => *pair.q.position(j),
            None => {
                let j = (0..pair.q.len())
                    .max_by(|&a, &b| {
                        (pair.q.position(a) - moved)
                            .norm()
                            .total_cmp(&(pair.q.position(b) - moved).norm())
                    })
                    .unwrap_or(0);
                *pair.q.position(j)
            }
        };
        let graph = |cloud, members: Vec<usize>, at| {
            model.graph(&patch_from_indices(cloud, members, at)?)
        };
        out.push(TripletSample {
            reference: graph(&pair.p, p_members, at)?,
            positive: graph(&pair.q, q_members, moved)?,
            negative: graph(&pair.q, qtree.knn(&neg_at, n), neg_at)?,
            labels: None,
            warp: Some(warp),
        });
    }
    Ok((out, skipped))
}

/// Reference patches in P, the patch around the same surface location in Q,
/// and a distant negative patch in Q, for `patches_per_pair` random seeds per
/// pair.
pub fn pose_triplets(
    model: &ModelConfig,
    pairs: &[PosePair],
    cfg: &TrainConfig,
) -> Result<(Vec<TripletSample>, usize)> {
    let per_pair: Vec<(Vec<TripletSample>, usize)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| pair_triplets(model, pair, cfg, derive_seed(cfg.seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (s, k) in per_pair {
        samples.extend(s);
        skipped += k;
    }
    Ok((samples, skipped))
}

/// Random split of `0..len` into (train, held-out) index lists, each sorted;
/// the held-out part has `round(fraction * len)` entries.
pub fn split_holdout(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((fraction.clamp(0.0, 1.0) * len as f64).round() as usize).min(len);
    let mut test = order.split_off(len - held);
    order.sort_unstable();
    test.sort_unstable();
    (order, test)
}

/// Fraction of labeled views whose predicted keypoint is the labeled node or
/// one of its graph neighbors.
pub fn keypoint_accuracy(model: &GraphiteModel, samples: &[TripletSample]) -> Result<f64> {
    let hits: Vec<usize> = samples
        .par_iter()
        .filter_map(|s| s.labels.as_ref().map(|l| (s, l)))
        .map(|(s, l)| {
            let mut hit = 0;
            for (g, lab) in [(&s.reference, &l.reference), (&s.positive, &l.positive)] {
                let predicted = model.forward(g)?.keypoint_index();
                if g.hop_distance(predicted, lab.keypoint_index)? <= 1 {
                    hit += 1;
                }
            }
            Ok(hit)
        })
        .collect::<Result<_>>()?;
    if hits.is_empty() {
        return Err(Error::Dataset("no labeled samples to evaluate".into()));
    }
    Ok(hits.iter().sum::<usize>() as f64 / (2 * hits.len()) as f64)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of triplets whose reference descriptor is closer to the positive
/// than to the negative.
pub fn triplet_accuracy(model: &GraphiteModel, samples: &[TripletSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    let wins: Vec<bool> = samples
        .par_iter()
        .map(|s| {
            let a = model.forward(&s.reference)?.descriptor;
            let p = model.forward(&s.positive)?.descriptor;
            let n = model.forward(&s.negative)?.descriptor;
            Ok(distance(&a, &p) < distance(&a, &n))
        })
        .collect::<Result<_>>()?;
    Ok(wins.iter().filter(|&&w| w).count() as f64 / wins.len() as f64)
}
