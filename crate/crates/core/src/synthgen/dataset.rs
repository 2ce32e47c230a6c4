//! Labeled corner-patch pairs on disk.
//!
//! ```text
//! out_dir/
//!   manifest.txt
//!   inst_000000/
//!     view_a.xyz  view_b.xyz      patch points with normals
//!     labels_a.txt labels_b.txt   keypoint, score, corner, seed, values
//!     meta.txt                    corner geometry and viewpoints
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corner::{score_label, CornerConfig, PrimitiveCorner};
use super::sampling::{sample_view, ViewConfig};
use super::{derive_seed, Manifest};
use crate::error::{Error, Result};
use crate::graph::{label_values, PatchGraph, Radius, ValueLabels, DEFAULT_RADIUS_MULTIPLIER};
use crate::patching::{patch_from_indices, Patch};
use crate::pointcloud::{load_cloud, save_cloud, CloudFormat, PointCloud};

/// Patch size for corner pretraining.
pub const CORNER_PATCH_SIZE: usize = 81;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CornerDatasetConfig {
    pub patch_size: usize,
    /// Surface sampling density, points per square meter.
    pub density: f64,
    /// Largest distance between the apex and the patch seed, meters.
    pub seed_offset: f64,
    pub radius_multiplier: f64,
    pub corner: CornerConfig,
    pub view: ViewConfig,
}

impl Default for CornerDatasetConfig {
    fn default() -> Self {
        Self {
            patch_size: CORNER_PATCH_SIZE,
            density: 2500.0,
            seed_offset: 0.02,
            radius_multiplier: DEFAULT_RADIUS_MULTIPLIER,
            corner: CornerConfig::default(),
            view: ViewConfig::default(),
        }
    }
}

/// One sampled view of a corner, cut down to the patch.
#[derive(Debug, Clone)]
pub struct CornerView {
    /// Exactly the patch members, nearest to the seed first.
    pub cloud: PointCloud,
    pub labels: ValueLabels,
    pub seed: Vector3<f64>,
    pub viewpoint: Vector3<f64>,
}

impl CornerView {
    pub fn patch(&self) -> Result<Patch> {
        patch_from_indices(&self.cloud, (0..self.cloud.len()).collect(), self.seed)
    }

    pub fn keypoint_position(&self) -> Vector3<f64> {
        *self.cloud.position(self.labels.keypoint_index)
    }
}

#[derive(Debug, Clone)]
pub struct CornerInstance {
    pub id: usize,
    pub corner: PrimitiveCorner,
    pub score: f64,
    pub views: [CornerView; 2],
    /// Id of the instance used as the triplet negative.
    pub negative: usize,
}

impl CornerInstance {
    /// The in-memory equivalent of this instance after a save/load round trip.
    pub fn sample(&self) -> Result<CornerSample> {
        Ok(CornerSample {
            id: self.id,
            negative: self.negative,
            score: self.score,
            views: [
                (self.views[0].patch()?, self.views[0].labels.clone()),
                (self.views[1].patch()?, self.views[1].labels.clone()),
            ],
        })
    }
}

const VIEW_RETRIES: u64 = 10;

fn make_view(
    corner: &PrimitiveCorner,
    seed_point: Vector3<f64>,
    cfg: &CornerDatasetConfig,
    view_seed: u64,
) -> Result<CornerView> {
    for attempt in 0..VIEW_RETRIES {
        let (cloud, viewpoint) = sample_view(
            corner,
            cfg.density,
            derive_seed(view_seed, attempt),
            cfg.corner.extent,
            &cfg.view,
        )?;
        if cloud.len() < cfg.patch_size {
            continue;
        }
        let members = cloud.kdtree().knn(&seed_point, cfg.patch_size);
        let cloud = cloud.select(&members);
        let apex = corner.apex();
        let mut keypoint = 0;
        let mut best = f64::INFINITY;
        for (i, p) in cloud.positions().enumerate() {
            let d = (p - apex).norm_squared();
            if d < best {
                best = d;
                keypoint = i;
            }
        }
        let view = CornerView {
            cloud,
            labels: ValueLabels {
                values: Vec::new(),
                keypoint_index: keypoint,
            },
            seed: seed_point,
            viewpoint,
        };
        let graph = PatchGraph::from_patch(&view.patch()?, Radius::Relative(cfg.radius_multiplier))?;
        let labels = label_values(&graph, keypoint)?;
        return Ok(CornerView { labels, ..view });
    }
    Err(Error::Degenerate(format!(
        "could not sample {} visible points near the corner",
        cfg.patch_size
    )))
}

/// Generates instance `id` of a dataset seeded with `seed`.
pub fn generate_instance(id: usize, count: usize, seed: u64, cfg: &CornerDatasetConfig) -> Result<CornerInstance> {
    let inst_seed = derive_seed(seed, id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
    let corner = PrimitiveCorner::random(&mut rng, &cfg.corner);
    let r = cfg.seed_offset * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let (seed_point, _) = corner.surface_point(r * a.cos(), r * a.sin());
    let view_a = make_view(&corner, seed_point, cfg, rng.random())?;
    let view_b = make_view(&corner, seed_point, cfg, rng.random())?;
    let negative = if count > 1 {
        let k = rng.random_range(0..count - 1);
        if k >= id {
            k + 1
        } else {
            k
        }
    } else {
        id
    };
    Ok(CornerInstance {
        id,
        score: score_label(&corner, &cfg.corner),
        corner,
        views: [view_a, view_b],
        negative,
    })
}

pub fn instance_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("inst_{id:06}"))
}

fn write_labels(path: &Path, view: &CornerView, inst: &CornerInstance) -> Result<()> {
    let mut s = String::new();
    let c = inst.corner.apex();
    let _ = writeln!(s, "keypoint {}", view.labels.keypoint_index);
    let _ = writeln!(s, "score {:?}", inst.score);
    let _ = writeln!(s, "corner {:?} {:?} {:?}", c.x, c.y, c.z);
    let _ = writeln!(s, "seed {:?} {:?} {:?}", view.seed.x, view.seed.y, view.seed.z);
    let values: Vec<String> = view.labels.values.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(s, "values {}", values.join(" "));
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_meta(path: &Path, inst: &CornerInstance) -> Result<()> {
    let mut s = String::new();
    let c = &inst.corner;
    let apex = c.apex();
    let _ = writeln!(s, "apex {:?} {:?} {:?}", apex.x, apex.y, apex.z);
    let r = c.rotation();
    let _ = writeln!(
        s,
        "rotation {}",
        r.transpose().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(s, "height {:?}", c.height);
    let _ = writeln!(s, "taper {:?}", c.taper);
    let _ = writeln!(s, "defect {:?}", c.angular_defect());
    for f in &c.faces {
        let _ = writeln!(s, "face {:?} {:?} {:?}", f.azimuth, f.elevation, f.curvature);
    }
    for (tag, v) in ["viewpoint_a", "viewpoint_b"].iter().zip(&inst.views) {
        let _ = writeln!(s, "{tag} {:?} {:?} {:?}", v.viewpoint.x, v.viewpoint.y, v.viewpoint.z);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub const CORNER_KIND: &str = "corners";

/// Generates `count` instances and writes them under `out_dir`.
pub fn build_dataset(count: usize, out_dir: &Path, seed: u64, cfg: &CornerDatasetConfig) -> Result<Manifest> {
    if count < 2 {
        return Err(Error::InvalidInput("a triplet dataset needs at least 2 instances".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<Result<Vec<String>>> = (0..count)
        .into_par_iter()
        .map(|id| {
            let inst = generate_instance(id, count, seed, cfg)?;
            let dir = instance_dir(out_dir, id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (tag, view) in ["a", "b"].iter().zip(&inst.views) {
                save_cloud(&view.cloud, &dir.join(format!("view_{tag}.xyz")), CloudFormat::Xyz)?;
                write_labels(&dir.join(format!("labels_{tag}.txt")), view, &inst)?;
            }
            write_meta(&dir.join("meta.txt"), &inst)?;
            Ok(vec![
                id.to_string(),
                format!("inst_{id:06}"),
                inst.negative.to_string(),
                format!("{:?}", inst.score),
                inst.views[0].labels.keypoint_index.to_string(),
                inst.views[1].labels.keypoint_index.to_string(),
            ])
        })
        .collect();
    let manifest = Manifest {
        kind: CORNER_KIND.into(),
        header: vec![
            ("count".into(), count.to_string()),
            ("seed".into(), seed.to_string()),
            ("patch_size".into(), cfg.patch_size.to_string()),
            ("radius_multiplier".into(), format!("{:?}", cfg.radius_multiplier)),
            ("density".into(), format!("{:?}", cfg.density)),
        ],
        columns: ["id", "dir", "negative", "score", "keypoint_a", "keypoint_b"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// A loaded corner dataset: per instance, both views' patches and labels.
#[derive(Debug, Clone)]
pub struct CornerSample {
    pub id: usize,
    pub negative: usize,
    pub score: f64,
    pub views: [(Patch, ValueLabels); 2],
}

fn read_labels(path: &Path) -> Result<(ValueLabels, Vector3<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keypoint = None;
    let mut seed = None;
    let mut values = None;
    for (no, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let nums = || -> Result<Vec<f64>> {
            line.split_whitespace()
                .skip(1)
                .map(|v| v.parse().map_err(|_| Error::parse(no + 1, format!("bad number in {}", path.display()))))
                .collect()
        };
        match key {
            "keypoint" => {
                keypoint = Some(
                    parts
                        .next()
                        .and_then(|v| v.parse::<usize>().ok())
                        .ok_or_else(|| Error::parse(no + 1, "bad keypoint"))?,
                )
            }
            "seed" => {
                let v = nums()?;
                if v.len() != 3 {
                    return Err(Error::parse(no + 1, "seed needs 3 values"));
                }
                seed = Some(Vector3::new(v[0], v[1], v[2]));
            }
            "values" => values = Some(nums()?),
            _ => {}
        }
    }
    let missing = |what: &str| Error::Dataset(format!("{}: missing {what}", path.display()));
    Ok((
        ValueLabels {
            values: values.ok_or_else(|| missing("values"))?,
            keypoint_index: keypoint.ok_or_else(|| missing("keypoint"))?,
        },
        seed.ok_or_else(|| missing("seed"))?,
    ))
}

/// Loads every instance listed in `dir/manifest.txt`.
pub fn load_dataset(dir: &Path) -> Result<Vec<CornerSample>> {
    let manifest = Manifest::load(&dir.join("manifest.txt"))?;
    if manifest.kind != CORNER_KIND {
        return Err(Error::Dataset(format!(
            "expected a `{CORNER_KIND}` dataset, found `{}`",
            manifest.kind
        )));
    }
    let col = |name: &str| manifest.column(name);
    let (c_id, c_dir, c_neg, c_score) = (col("id")?, col("dir")?, col("negative")?, col("score")?);
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let field = |c: usize| -> Result<&str> {
                row.get(c)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Dataset("short manifest row".into()))
            };
            let num = |c: usize| -> Result<usize> {
                field(c)?
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad integer in manifest: {row:?}")))
            };
            let inst_dir = dir.join(field(c_dir)?);
            let load_view = |tag: &str| -> Result<(Patch, ValueLabels)> {
                let cloud = load_cloud(&inst_dir.join(format!("view_{tag}.xyz")), CloudFormat::Xyz)?;
                let (labels, seed) = read_labels(&inst_dir.join(format!("labels_{tag}.txt")))?;
                if labels.values.len() != cloud.len() || labels.keypoint_index >= cloud.len() {
                    return Err(Error::Dataset(format!(
                        "{}: labels do not match view_{tag}",
                        inst_dir.display()
                    )));
                }
                let patch = patch_from_indices(&cloud, (0..cloud.len()).collect(), seed)?;
                Ok((patch, labels))
            };
            Ok(CornerSample {
                id: num(c_id)?,
                negative: num(c_neg)?,
                score: field(c_score)?
                    .parse()
                    .map_err(|_| Error::Dataset("bad score in manifest".into()))?,
                views: [load_view("a")?, load_view("b")?],
            })
        })
        .collect()
}
