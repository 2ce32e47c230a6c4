//! Primitive corners: a pyramid-like apex whose faces descend to a ground
//! plane, described as a height field in the corner's own frame.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pointcloud::RigidPose;

/// One face, spanning from its own edge to the next face's edge
/// (counter-clockwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    /// Azimuth of the face's leading edge, radians in `[0, 2π)`.
    pub azimuth: f64,
    /// Angle of that edge below the horizontal, radians.
    pub elevation: f64,
    /// Quadratic bulge coefficient, 1/m. Positive bulges outward.
    pub curvature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CornerConfig {
    pub min_faces: usize,
    pub max_faces: usize,
    /// Range of the sharpness parameter; the mean edge elevation is
    /// `taper * max_elevation_deg`.
    pub taper: [f64; 2],
    pub max_elevation_deg: f64,
    /// Range of the apex height above the ground plane, meters.
    pub height: [f64; 2],
    /// Largest bulge coefficient magnitude, 1/m.
    pub curvature: f64,
    /// Largest tilt of the corner axis away from vertical, degrees.
    pub max_tilt_deg: f64,
    /// Height at which the score stops being attenuated, meters.
    pub height_ref: f64,
    /// Angular defect that maps to score 1, radians.
    pub defect_max: f64,
    /// Radius of the sampled surface disk around the apex, meters.
    pub extent: f64,
}

impl Default for CornerConfig {
    fn default() -> Self {
        Self {
            min_faces: 3,
            max_faces: 10,
            taper: [0.0, 1.0],
            max_elevation_deg: 60.0,
            height: [0.03, 0.3],
            curvature: 1.0,
            max_tilt_deg: 15.0,
            height_ref: 0.1,
            defect_max: PI,
            extent: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCorner {
    /// Corner frame to world; the apex is the frame origin and the corner
    /// axis is the frame's z axis.
    pub placement: RigidPose,
    /// Sorted by azimuth.
    pub faces: Vec<Face>,
    /// Apex height above the ground plane, meters.
    pub height: f64,
    pub taper: f64,
    /// Plane coefficients `z = a x + b y` per face, corner frame.
    planes: Vec<(f64, f64)>,
}

/// Unit edge direction at `azimuth`, `elevation` below horizontal.
fn edge(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        -elevation.sin(),
    )
}

impl PrimitiveCorner {
    /// Builds a corner from explicit faces. Faces are sorted by azimuth; every
    /// gap between consecutive edges must be below π.
    pub fn new(placement: RigidPose, mut faces: Vec<Face>, height: f64, taper: f64) -> Self {
        assert!(faces.len() >= 3, "a corner needs at least 3 faces");
        assert!(height > 0.0, "height must be positive");
        for f in &mut faces {
            f.azimuth = f.azimuth.rem_euclid(2.0 * PI);
        }
        faces.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth));
        let m = faces.len();
        let planes = (0..m)
            .map(|i| {
                let e0 = edge(faces[i].azimuth, faces[i].elevation);
                let e1 = edge(faces[(i + 1) % m].azimuth, faces[(i + 1) % m].elevation);
                let n = e0.cross(&e1);
                assert!(n.z > 0.0, "edge gap must be below π");
                (-n.x / n.z, -n.y / n.z)
            })
            .collect();
        Self {
            placement,
            faces,
            height,
            taper,
            planes,
        }
    }

    /// A planar corner: `faces` coplanar faces, no bulge.
    pub fn flat(placement: RigidPose, faces: usize, height: f64) -> Self {
        let faces = (0..faces)
            .map(|i| Face {
                azimuth: 2.0 * PI * i as f64 / faces as f64,
                elevation: 0.0,
                curvature: 0.0,
            })
            .collect();
        Self::new(placement, faces, height, 0.0)
    }

    /// The three-face corner of an axis-aligned box, axis along the diagonal.
    pub fn box_corner(placement: RigidPose, height: f64) -> Self {
        // edges mutually orthogonal: tan²(elevation) = 1/2
        let elevation = (0.5f64).sqrt().atan();
        let faces = (0..3)
            .map(|i| Face {
                azimuth: 2.0 * PI * i as f64 / 3.0,
                elevation,
                curvature: 0.0,
            })
            .collect();
        Self::new(placement, faces, height, elevation / (PI / 3.0))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &CornerConfig) -> Self {
        let m = rng.random_range(cfg.min_faces..=cfg.max_faces);
        let taper = rng.random_range(cfg.taper[0]..=cfg.taper[1]);
        let height = rng.random_range(cfg.height[0]..=cfg.height[1]);
        let mean_elev = taper * cfg.max_elevation_deg.to_radians();
        let gaps = loop {
            let u: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = u.iter().sum();
            let gaps: Vec<f64> = u.iter().map(|v| 2.0 * PI * v / total).collect();
            if gaps.iter().all(|&g| g < 0.85 * PI) {
                break gaps;
            }
        };
        let start = rng.random_range(0.0..2.0 * PI);
        let mut azimuth = start;
        let faces = gaps
            .iter()
            .map(|g| {
                let jitter = rng.random_range(-0.25..0.25);
                let f = Face {
                    azimuth,
                    elevation: (mean_elev * (1.0 + jitter)).clamp(0.0, 80f64.to_radians()),
                    curvature: rng.random_range(-cfg.curvature..=cfg.curvature),
                };
                azimuth += g;
                f
            })
            .collect();
        let tilt_axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
        let tilt = rng.random_range(0.0..=cfg.max_tilt_deg.to_radians());
        let apex = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.0),
        );
        let placement = if tilt_axis.norm() > 1e-9 {
            RigidPose::from_axis_angle(tilt_axis, tilt, apex)
        } else {
            RigidPose::from_translation(apex)
        };
        Self::new(placement, faces, height, taper)
    }

    pub fn apex(&self) -> Vector3<f64> {
        *self.placement.translation()
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        self.placement.rotation()
    }

    /// Same geometry, moved by `pose`.
    pub fn transformed(&self, pose: &RigidPose) -> Self {
        Self {
            placement: pose.compose(&self.placement),
            ..self.clone()
        }
    }

    fn sector(&self, phi: f64) -> (usize, f64) {
        let m = self.faces.len();
        let phi = phi.rem_euclid(2.0 * PI);
        for i in 0..m {
            let a0 = self.faces[i].azimuth;
            let mut span = self.faces[(i + 1) % m].azimuth - a0;
            if span <= 0.0 {
                span += 2.0 * PI;
            }
            let mut d = phi - a0;
            if d < 0.0 {
                d += 2.0 * PI;
            }
            if d < span {
                return (i, d / span);
            }
        }
        (m - 1, 1.0)
    }

    /// Face surface height (without the ground clamp) and its gradient.
    fn face_height(&self, face: usize, t: f64, x: f64, y: f64) -> (f64, [f64; 2]) {
        let m = self.faces.len();
        let (a, b) = self.planes[face];
        let c = self.faces[face].curvature;
        let rho2 = x * x + y * y;
        let mut span = self.faces[(face + 1) % m].azimuth - self.faces[face].azimuth;
        if span <= 0.0 {
            span += 2.0 * PI;
        }
        let s = (PI * t).sin();
        let z = a * x + b * y + c * rho2 * s;
        // gradient of c ρ² sin(π t): radial 2cρ sin, angular (1/ρ) cρ² π/span cos
        let (gx, gy) = if rho2 > 0.0 {
            let rho = rho2.sqrt();
            let (cphi, sphi) = (x / rho, y / rho);
            let dr = 2.0 * c * rho * s;
            let dphi_over_rho = c * rho * PI / span * (PI * t).cos();
            (dr * cphi - dphi_over_rho * sphi, dr * sphi + dphi_over_rho * cphi)
        } else {
            (0.0, 0.0)
        };
        (z, [a + gx, b + gy])
    }

    /// Height and upward unit normal at `(x, y)` in the corner frame. The
    /// ground sits at `-height`.
    pub fn local_surface(&self, x: f64, y: f64) -> (f64, Vector3<f64>) {
        let (face, t) = self.sector(y.atan2(x));
        let (z, g) = self.face_height(face, t, x, y);
        if z > -self.height {
            (z, Vector3::new(-g[0], -g[1], 1.0).normalize())
        } else {
            (-self.height, Vector3::z())
        }
    }

    /// Height of face `i` without the ground clamp; zero at the apex.
    pub fn face_surface_height(&self, face: usize, x: f64, y: f64) -> f64 {
        let (_, t) = self.sector(y.atan2(x));
        self.face_height(face, t, x, y).0
    }

    /// Surface point and normal over local `(x, y)`, world frame.
    pub fn surface_point(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (z, n) = self.local_surface(x, y);
        (
            self.placement.apply(&Vector3::new(x, y, z)),
            self.placement.apply_direction(&n),
        )
    }

    /// Angles between consecutive edges at the apex.
    pub fn face_angles(&self) -> Vec<f64> {
        let m = self.faces.len();
        (0..m)
            .map(|i| {
                let a = &self.faces[i];
                let b = &self.faces[(i + 1) % m];
                let d = edge(a.azimuth, a.elevation).dot(&edge(b.azimuth, b.elevation));
                d.clamp(-1.0, 1.0).acos()
            })
            .collect()
    }

    /// `2π - Σ face angles`.
    pub fn angular_defect(&self) -> f64 {
        2.0 * PI - self.face_angles().iter().sum::<f64>()
    }
}

/// Saliency score: angular defect over `defect_max`, clamped to `[0, 1]`, times
/// `min(1, height / height_ref)`.
pub fn score_label(corner: &PrimitiveCorner, cfg: &CornerConfig) -> f64 {
    let defect = corner.angular_defect();
    // coplanar faces sum to 2π only up to rounding
    let defect = if defect.abs() < 1e-9 { 0.0 } else { defect };
    let sharp = (defect / cfg.defect_max).clamp(0.0, 1.0);
    let tall = (corner.height / cfg.height_ref).min(1.0);
    sharp * tall
}
