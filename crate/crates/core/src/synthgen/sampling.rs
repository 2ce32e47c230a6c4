//! Area-uniform sampling of height fields and view-dependent thinning.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corner::PrimitiveCorner;
use crate::error::{Error, Result};
use crate::pointcloud::{Point, PointCloud};

/// Region of the xy plane a height field is sampled over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Disk { radius: f64 },
    Square { half: f64 },
}

impl Domain {
    fn area(&self) -> f64 {
        match *self {
            Domain::Disk { radius } => PI * radius * radius,
            Domain::Square { half } => 4.0 * half * half,
        }
    }

    fn half(&self) -> f64 {
        match *self {
            Domain::Disk { radius } => radius,
            Domain::Square { half } => half,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Domain::Disk { radius } => x * x + y * y <= radius * radius,
            Domain::Square { half } => x.abs() <= half && y.abs() <= half,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let h = self.half();
        loop {
            let (x, y) = (rng.random_range(-h..h), rng.random_range(-h..h));
            if self.contains(x, y) {
                return (x, y);
            }
        }
    }
}

const PROBE: usize = 96;

/// Surface area over the domain and the largest area element `1 / n_z`,
/// estimated on a regular grid.
fn probe<F>(field: &F, domain: Domain) -> (f64, f64)
where
    F: Fn(f64, f64) -> (f64, Vector3<f64>),
{
    let h = domain.half();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut max_elem: f64 = 1.0;
    for i in 0..PROBE {
        for j in 0..PROBE {
            let x = -h + 2.0 * h * (i as f64 + 0.5) / PROBE as f64;
            let y = -h + 2.0 * h * (j as f64 + 0.5) / PROBE as f64;
            if !domain.contains(x, y) {
                continue;
            }
            let (_, n) = field(x, y);
            let elem = 1.0 / n.z.max(1e-3);
            sum += elem;
            max_elem = max_elem.max(elem);
            count += 1;
        }
    }
    (domain.area() * sum / count.max(1) as f64, max_elem)
}

/// `count` points distributed uniformly by surface area over the height field.
pub fn sample_height_field<F, R>(field: &F, domain: Domain, count: usize, rng: &mut R) -> Vec<(Vector3<f64>, Vector3<f64>)>
where
    F: Fn(f64, f64) -> (f64, Vector3<f64>),
    R: Rng + ?Sized,
{
    let (_, max_elem) = probe(field, domain);
    let bound = max_elem * 1.25;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (x, y) = domain.draw(rng);
        let (z, n) = field(x, y);
        let elem = 1.0 / n.z.max(1e-3);
        if rng.random::<f64>() * bound < elem {
            out.push((Vector3::new(x, y, z), n));
        }
    }
    out
}

pub fn surface_area<F>(field: &F, domain: Domain) -> f64
where
    F: Fn(f64, f64) -> (f64, Vector3<f64>),
{
    probe(field, domain).0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Lowest camera elevation above the horizon, degrees.
    pub min_elevation_deg: f64,
    /// Camera distance from the apex, meters.
    pub distance: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            min_elevation_deg: 55.0,
            distance: 1.0,
        }
    }
}

/// Random camera position on the upper hemisphere around the apex.
pub fn random_viewpoint<R: Rng + ?Sized>(rng: &mut R, corner: &PrimitiveCorner, cfg: &ViewConfig) -> Vector3<f64> {
    let az = rng.random_range(0.0..2.0 * PI);
    let el = rng.random_range(cfg.min_elevation_deg.to_radians()..=PI / 2.0);
    corner.apex() + cfg.distance * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

const VIEW_ATTEMPTS: usize = 10;

/// Samples the corner surface as seen from a random viewpoint: back-facing
/// points are dropped and front-facing points are kept with probability equal
/// to the cosine between normal and viewing ray.
pub fn sample_view(corner: &PrimitiveCorner, density: f64, seed: u64, extent: f64, view: &ViewConfig) -> Result<(PointCloud, Vector3<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..VIEW_ATTEMPTS {
        let vp = random_viewpoint(&mut rng, corner, view);
        let cloud = sample_view_from(corner, density, vp, rng.random(), extent)?;
        if !cloud.is_empty() {
            return Ok((cloud, vp));
        }
    }
    Err(Error::Degenerate(format!(
        "no visible surface after {VIEW_ATTEMPTS} viewpoints"
    )))
}

/// [`sample_view`] from a fixed viewpoint (world frame).
pub fn sample_view_from(corner: &PrimitiveCorner, density: f64, viewpoint: Vector3<f64>, seed: u64, extent: f64) -> Result<PointCloud> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(Error::InvalidInput(format!("density must be > 0, got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = |x: f64, y: f64| corner.local_surface(x, y);
    let domain = Domain::Disk { radius: extent };
    let count = (density * surface_area(&field, domain)).round() as usize;
    let mut points = Vec::new();
    for (local, n_local) in sample_height_field(&field, domain, count, &mut rng) {
        let p = corner.placement.apply(&local);
        let n = corner.placement.apply_direction(&n_local);
        let ray = (viewpoint - p).normalize();
        let c = n.dot(&ray);
        let keep = rng.random::<f64>();
        if c > 0.0 && keep < c {
            points.push(Point::new(p, Some(n))?);
        }
    }
    Ok(PointCloud::new(points))
}
