//! Composed-primitive scenes (a ground square carrying several spikes) and
//! posed cloud pairs cut from them.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corner::{CornerConfig, PrimitiveCorner};
use super::sampling::{sample_height_field, Domain};
use super::{derive_seed, Manifest};
use crate::error::{Error, Result};
use crate::pointcloud::{load_cloud, save_cloud, CloudFormat, Point, PointCloud, RigidPose};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Inclusive range of sampled points per cloud.
    pub points: [usize; 2],
    /// Inclusive range of spikes per scene.
    pub spikes: [usize; 2],
    /// Half the ground square's side, meters.
    pub half_size: f64,
    pub spike_height: [f64; 2],
    /// Range of the spikes' mean edge elevation, degrees.
    pub spike_elevation_deg: [f64; 2],
    /// Smallest distance between spike apexes in the ground plane, meters.
    pub min_separation: f64,
    pub curvature: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            points: [300, 1000],
            spikes: [3, 6],
            half_size: 0.5,
            spike_height: [0.1, 0.3],
            spike_elevation_deg: [40.0, 65.0],
            min_separation: 0.28,
            curvature: 1.0,
        }
    }
}

/// A ground square at `z = 0` with upright spikes.
#[derive(Debug, Clone)]
pub struct ComposedScene {
    pub spikes: Vec<PrimitiveCorner>,
    pub half_size: f64,
}

impl ComposedScene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Self {
        let count = rng.random_range(cfg.spikes[0]..=cfg.spikes[1]);
        let limit = cfg.half_size * 0.7;
        let mut centers: Vec<(f64, f64)> = Vec::with_capacity(count);
        let mut tries = 0;
        while centers.len() < count && tries < 10_000 {
            tries += 1;
            let c = (rng.random_range(-limit..limit), rng.random_range(-limit..limit));
            if centers
                .iter()
                .all(|o| ((o.0 - c.0).powi(2) + (o.1 - c.1).powi(2)).sqrt() >= cfg.min_separation)
            {
                centers.push(c);
            }
        }
        let spikes = centers
            .into_iter()
            .map(|(x, y)| {
                let height = rng.random_range(cfg.spike_height[0]..=cfg.spike_height[1]);
                let elev = rng.random_range(cfg.spike_elevation_deg[0]..=cfg.spike_elevation_deg[1]);
                let corner_cfg = CornerConfig {
                    taper: [1.0, 1.0],
                    max_elevation_deg: elev,
                    height: [height, height],
                    curvature: cfg.curvature,
                    max_tilt_deg: 0.0,
                    ..CornerConfig::default()
                };
                let c = PrimitiveCorner::random(rng, &corner_cfg);
                let placement = RigidPose::from_translation(Vector3::new(x, y, height));
                PrimitiveCorner::new(placement, c.faces, height, c.taper)
            })
            .collect();
        Self {
            spikes,
            half_size: cfg.half_size,
        }
    }

    /// Height and upward normal at `(x, y)`.
    pub fn surface(&self, x: f64, y: f64) -> (f64, Vector3<f64>) {
        let mut best = (0.0, Vector3::z());
        for s in &self.spikes {
            let a = s.apex();
            let (z, n) = s.local_surface(x - a.x, y - a.y);
            let z = z + a.z;
            if z > best.0 {
                best = (z, n);
            }
        }
        best
    }

    pub fn apexes(&self) -> Vec<Vector3<f64>> {
        self.spikes.iter().map(PrimitiveCorner::apex).collect()
    }

    /// `count` area-uniform surface samples with analytic normals.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> PointCloud {
        let field = |x: f64, y: f64| self.surface(x, y);
        let samples = sample_height_field(&field, Domain::Square { half: self.half_size }, count, rng);
        PointCloud::new(
            samples
                .into_iter()
                .map(|(p, n)| Point {
                    position: p,
                    normal: Some(n),
                })
                .collect(),
        )
    }
}

/// Centers the bounding box at the origin and scales its largest side to 1.
pub fn normalize_unit_cube(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in cloud.positions() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::Degenerate("cloud has zero extent".into()));
    }
    let center = (lo + hi) / 2.0;
    Ok(PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| Point {
                position: (p.position - center) / extent,
                normal: p.normal,
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PosePairConfig {
    pub scene: SceneConfig,
    /// Largest rotation about each Euler axis, degrees.
    pub max_angle_deg: f64,
    /// Largest translation along each axis, meters.
    pub max_translation: f64,
    /// Gaussian noise added to the target cloud, meters.
    pub noise_sigma: f64,
}

impl Default for PosePairConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            max_angle_deg: 45.0,
            max_translation: 0.5,
            noise_sigma: 0.0,
        }
    }
}

/// Source cloud, target cloud and the pose mapping source onto target.
#[derive(Debug, Clone)]
pub struct PosePair {
    pub p: PointCloud,
    pub q: PointCloud,
    pub pose: RigidPose,
    /// `(index in p, index in q)` for every source point.
    pub correspondences: Vec<(usize, usize)>,
}

/// Random rotation with each Euler angle in `[0, max_angle]` and translation
/// components in `[-max_translation, max_translation]`.
pub fn random_bounded_pose<R: Rng + ?Sized>(rng: &mut R, max_angle_deg: f64, max_translation: f64) -> RigidPose {
    let a = max_angle_deg.to_radians();
    let mut angle = || if a > 0.0 { rng.random_range(0.0..=a) } else { 0.0 };
    let (roll, pitch, yaw) = (angle(), angle(), angle());
    let mut shift = || {
        if max_translation > 0.0 {
            rng.random_range(-max_translation..=max_translation)
        } else {
            0.0
        }
    };
    let t = Vector3::new(shift(), shift(), shift());
    RigidPose::from_euler_zyx(roll, pitch, yaw, t)
}

/// Source: a sampled, unit-cube-normalized scene. Target: the source moved by
/// a random pose, randomly permuted, plus optional noise.
pub fn generate_pose_pair(seed: u64, cfg: &PosePairConfig) -> Result<PosePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = ComposedScene::random(&mut rng, &cfg.scene);
    let count = rng.random_range(cfg.scene.points[0]..=cfg.scene.points[1]);
    let p = normalize_unit_cube(&scene.sample(count, &mut rng))?;
    let pose = random_bounded_pose(&mut rng, cfg.max_angle_deg, cfg.max_translation);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.shuffle(&mut rng);
    let q = p.transform(&pose).permuted(&order);
    let q = q.add_gaussian_noise(cfg.noise_sigma, rng.random())?;
    let correspondences = order.iter().enumerate().map(|(qi, &pi)| (pi, qi)).collect::<Vec<_>>();
    let mut correspondences = correspondences;
    correspondences.sort_unstable();
    Ok(PosePair {
        p,
        q,
        pose,
        correspondences,
    })
}

pub const POSE_PAIR_KIND: &str = "pose-pairs";

pub fn save_pose_pair(pair: &PosePair, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_cloud(&pair.p, &dir.join("cloud_p.xyz"), CloudFormat::Xyz)?;
    save_cloud(&pair.q, &dir.join("cloud_q.xyz"), CloudFormat::Xyz)?;
    pair.pose.save(&dir.join("pose.txt"))?;
    let corr: String = pair
        .correspondences
        .iter()
        .map(|(a, b)| format!("{a}\t{b}\n"))
        .collect();
    let path = dir.join("correspondences.txt");
    fs::write(&path, corr).map_err(|e| Error::io(&path, e))
}

pub fn load_pose_pair(dir: &Path) -> Result<PosePair> {
    let p = load_cloud(&dir.join("cloud_p.xyz"), CloudFormat::Xyz)?;
    let q = load_cloud(&dir.join("cloud_q.xyz"), CloudFormat::Xyz)?;
    let pose = RigidPose::load(&dir.join("pose.txt"))?;
    let path = dir.join("correspondences.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut correspondences = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(no + 1, "bad correspondence index")))
            .collect::<Result<_>>()?;
        if v.len() != 2 || v[0] >= p.len() || v[1] >= q.len() {
            return Err(Error::parse(no + 1, "correspondence needs two in-range indices"));
        }
        correspondences.push((v[0], v[1]));
    }
    Ok(PosePair {
        p,
        q,
        pose,
        correspondences,
    })
}

/// Writes `count` pose pairs under `out_dir` as `pair_%06d/`.
pub fn build_pose_pairs(count: usize, out_dir: &Path, seed: u64, cfg: &PosePairConfig) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<Result<Vec<String>>> = (0..count)
        .into_par_iter()
        .map(|id| {
            let pair = generate_pose_pair(derive_seed(seed, id as u64), cfg)?;
            let name = format!("pair_{id:06}");
            save_pose_pair(&pair, &out_dir.join(&name))?;
            Ok(vec![id.to_string(), name, pair.p.len().to_string()])
        })
        .collect();
    let manifest = Manifest {
        kind: POSE_PAIR_KIND.into(),
        header: vec![
            ("count".into(), count.to_string()),
            ("seed".into(), seed.to_string()),
            ("max_angle_deg".into(), format!("{:?}", cfg.max_angle_deg)),
            ("noise_sigma".into(), format!("{:?}", cfg.noise_sigma)),
        ],
        columns: ["id", "dir", "points"].iter().map(|s| s.to_string()).collect(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

pub fn load_pose_pairs(dir: &Path) -> Result<Vec<PosePair>> {
    let manifest = Manifest::load(&dir.join("manifest.txt"))?;
    if manifest.kind != POSE_PAIR_KIND {
        return Err(Error::Dataset(format!(
            "expected a `{POSE_PAIR_KIND}` dataset, found `{}`",
            manifest.kind
        )));
    }
    let c_dir = manifest.column("dir")?;
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let name = row
                .get(c_dir)
                .ok_or_else(|| Error::Dataset("short manifest row".into()))?;
            load_pose_pair(&dir.join(name))
        })
        .collect()
}
