use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GraphiteModel, DESCRIPTOR_LEN};
use crate::patching::{extract_patches, PatchSeeds};
use crate::pointcloud::PointCloud;

/// One described patch: its keypoint in the cloud frame, saliency score and
/// unit descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Vector3<f64>,
    pub score: f64,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescribeConfig {
    pub patch_size: usize,
    pub num_patches: usize,
    /// Patches scoring below this are dropped; `None` keeps everything.
    pub score_threshold: Option<f64>,
    /// Seed for choosing patch centers.
    pub seed: u64,
    /// Neighborhood radius for normal estimation on clouds without normals,
    /// as a multiple of the cloud's average resolution.
    pub normal_radius_multiplier: f64,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        Self {
            patch_size: crate::patching::SCENE_PATCH_SIZE,
            num_patches: 100,
            score_threshold: None,
            seed: 0,
            normal_radius_multiplier: 4.0,
        }
    }
}

/// Adds PCA normals, oriented toward a viewpoint above the cloud, when it
/// has none.
pub fn with_normals(cloud: &PointCloud, radius_multiplier: f64) -> Result<PointCloud> {
    if cloud.has_normals() {
        return Ok(cloud.clone());
    }
    let r = radius_multiplier * cloud.average_resolution()?;
    // orient toward a viewpoint far above the cloud
    let view = cloud.centroid() + Vector3::new(0.0, 0.0, 1e3);
    crate::pointcloud::estimate_normals_toward(cloud, r, &view)
}

/// Describes `num_patches` patches around random cloud points. Patches are
/// independent and evaluated in parallel; the output order follows the seeds.
pub fn describe_cloud(model: &GraphiteModel, cloud: &PointCloud, cfg: &DescribeConfig) -> Result<Vec<Feature>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cloud = with_normals(cloud, cfg.normal_radius_multiplier)?;
    let seeds = PatchSeeds::Random {
        count: cfg.num_patches,
        seed: cfg.seed,
    };
    let patches = extract_patches(&cloud, cfg.patch_size, &seeds)?;
    let features: Vec<Feature> = patches
        .par_iter()
        .map(|p| {
            let f = model.describe_patch(p)?;
            Ok(Feature {
                keypoint: f.keypoint_position,
                score: f.score,
                descriptor: f.descriptor,
            })
        })
        .collect::<Result<_>>()?;
    Ok(match cfg.score_threshold {
        Some(t) => features.into_iter().filter(|f| f.score >= t).collect(),
        None => features,
    })
}

/// One line per feature: `kx ky kz score d0 .. d31`, tab-separated.
pub fn features_to_text(features: &[Feature]) -> String {
    let mut s = String::new();
    for f in features {
        let _ = write!(s, "{:?}\t{:?}\t{:?}\t{:?}", f.keypoint.x, f.keypoint.y, f.keypoint.z, f.score);
        for d in &f.descriptor {
            let _ = write!(s, "\t{d:?}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_features(text: &str) -> Result<Vec<Feature>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split('\t')
            .map(|v| v.trim().parse().map_err(|_| Error::parse(no + 1, format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 + DESCRIPTOR_LEN {
            return Err(Error::parse(
                no + 1,
                format!("expected {} fields, found {}", 4 + DESCRIPTOR_LEN, vals.len()),
            ));
        }
        out.push(Feature {
            keypoint: Vector3::new(vals[0], vals[1], vals[2]),
            score: vals[3],
            descriptor: vals[4..].to_vec(),
        });
    }
    Ok(out)
}

pub fn save_features(features: &[Feature], path: &Path) -> Result<()> {
    fs::write(path, features_to_text(features)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<Vec<Feature>> {
    parse_features(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// A putative correspondence between feature `index_p` of one cloud and
/// feature `index_q` of the other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_p: usize,
    pub index_q: usize,
    pub distance: f64,
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index and distance of the nearest descriptor; ties go to the lower index.
fn nearest(d: &[f64], pool: &[Feature]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, f) in pool.iter().enumerate() {
        let dist = descriptor_distance(d, &f.descriptor);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Nearest neighbor in descriptor space for every feature of `p`; with
/// `mutual`, only pairs that are each other's nearest neighbor survive.
/// Sorted by distance, then by `index_p`.
pub fn match_features(p: &[Feature], q: &[Feature], mutual: bool) -> Vec<Match> {
    if p.is_empty() || q.is_empty() {
        return Vec::new();
    }
    let forward: Vec<(usize, f64)> = p.par_iter().map(|f| nearest(&f.descriptor, q)).collect();
    let backward: Vec<usize> = if mutual {
        q.par_iter().map(|f| nearest(&f.descriptor, p).0).collect()
    } else {
        Vec::new()
    };
    let mut out: Vec<Match> = forward
        .into_iter()
        .enumerate()
        .filter(|&(i, (j, _))| !mutual || backward[j] == i)
        .map(|(i, (j, d))| Match {
            index_p: i,
            index_q: j,
            distance: d,
        })
        .collect();
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index_p.cmp(&b.index_p)));
    out
}
