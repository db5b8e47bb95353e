//! SE(2) primitives shared by registration and the pose graph.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar pose: position in meters and heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// `self ⊕ delta`: applies `delta`, expressed in this pose's frame.
    pub fn compose(&self, delta: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.yaw + delta.yaw,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.yaw,
        )
    }

    /// Pose of `other` expressed in this pose's frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.yaw - self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    pub fn to_transform(&self) -> RigidTransform2 {
        RigidTransform2::from_angle(self.yaw, Vector2::new(self.x, self.y))
    }
}

/// Planar rigid motion `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2 {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl RigidTransform2 {
    pub fn identity() -> Self {
        RigidTransform2 {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    pub fn from_angle(theta: f64, translation: Vector2<f64>) -> Self {
        let (s, c) = theta.sin_cos();
        RigidTransform2 {
            rotation: Matrix2::new(c, -s, s, c),
            translation,
        }
    }

    pub fn angle(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform2) -> RigidTransform2 {
        RigidTransform2 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform2 {
        let rt = self.rotation.transpose();
        RigidTransform2 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_pose(&self) -> Pose2 {
        Pose2::new(self.translation.x, self.translation.y, self.angle())
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix2::identity();
        let det = self.rotation.determinant() - 1.0;
        gram.abs().max().max(det.abs())
    }
}
