use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

/// A proper rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    /// Builds a pose, rejecting matrices that are not rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose has non-finite entries".into()));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho_err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal with det +1 (|RtR - I| = {ortho_err:.3e}, det = {det:.6})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`, angles in radians.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_euler_angles(roll, pitch, yaw).matrix();
        Self {
            rotation,
            translation,
        }
    }

    /// Random pose with each Euler angle uniform in `[-max_angle, max_angle]`
    /// and each translation component uniform in `[-max_translation, max_translation]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_angle: f64, max_translation: f64) -> Self {
        let mut angle = || {
            if max_angle > 0.0 {
                rng.random_range(-max_angle..=max_angle)
            } else {
                0.0
            }
        };
        let (roll, pitch, yaw) = (angle(), angle(), angle());
        let mut shift = || {
            if max_translation > 0.0 {
                rng.random_range(-max_translation..=max_translation)
            } else {
                0.0
            }
        };
        let t = Vector3::new(shift(), shift(), shift());
        Self::from_euler_zyx(roll, pitch, yaw, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_direction(&self, n: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * n
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Geodesic angle of the rotation part, in radians. Uses `atan2` of the
    /// skew and symmetric parts so small angles keep full precision.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        (skew.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
    }

    /// Angle between two rotations, in degrees.
    pub fn rotation_error_deg(&self, other: &RigidPose) -> f64 {
        self.inverse().compose(other).rotation_angle().to_degrees()
    }

    pub fn translation_error(&self, other: &RigidPose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl RigidPose {
    /// Two lines: `rotation` with 9 row-major entries, `translation` with 3.
    pub fn to_text(&self) -> String {
        let r: Vec<String> = self.rotation.transpose().iter().map(|v| format!("{v:?}")).collect();
        let t = &self.translation;
        format!("rotation {}\ntranslation {:?} {:?} {:?}\n", r.join(" "), t.x, t.y, t.z)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut rotation = None;
        let mut translation = None;
        for (no, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let key = match parts.next() {
                Some(k) if !k.starts_with('#') => k,
                _ => continue,
            };
            let vals: Vec<f64> = parts
                .map(|v| v.parse().map_err(|_| Error::parse(no + 1, format!("bad number `{v}`"))))
                .collect::<Result<_>>()?;
            match (key, vals.len()) {
                ("rotation", 9) => rotation = Some(Matrix3::from_row_slice(&vals)),
                ("translation", 3) => translation = Some(Vector3::new(vals[0], vals[1], vals[2])),
                ("rotation" | "translation", n) => {
                    return Err(Error::parse(no + 1, format!("`{key}` has {n} values")))
                }
                _ => {}
            }
        }
        match (rotation, translation) {
            (Some(r), Some(t)) => Self::new(r, t),
            _ => Err(Error::InvalidInput("pose needs `rotation` and `translation` lines".into())),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn rotation_angle_is_exact_for_tiny_and_large_angles() {
        for angle in [0.0, 1e-10, 1e-6, 0.3, 2.0, 3.1] {
            let p = RigidPose::from_axis_angle(Vector3::new(1.0, -2.0, 0.5), angle, Vector3::zeros());
            assert!((p.rotation_angle() - angle).abs() <= 1e-12 * angle.max(1e-3), "{angle}");
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = RigidPose::random(&mut rng, 3.0, 2.0);
            let id = p.compose(&p.inverse());
            assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
            assert!(id.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = RigidPose::random(&mut rng, 2.0, 1.0);
        assert_eq!(RigidPose::parse_text(&p.to_text()).unwrap(), p);
        assert!(RigidPose::parse_text("rotation 1 0 0\n").is_err());
    }

    #[test]
    fn random_pose_is_valid_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = RigidPose::random(&mut rng, 1.0, 0.5);
        RigidPose::new(*p.rotation(), *p.translation()).unwrap();
    }
}
