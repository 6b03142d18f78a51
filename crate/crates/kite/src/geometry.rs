//! SE(2) pose and tangent-space primitives.
//!
//! Every module that touches rigid-body state goes through these functions,
//! so the conventions are fixed here once: a pose is `(x, y, theta)` with
//! `theta` wrapped to `(-pi, pi]`, a tangent vector is `(rho_x, rho_y, omega)`
//! with translation components first, and angles are radians.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Below this rotation magnitude the V(theta) blocks of exp/log switch to
/// their series expansions, removing the 0/0 at theta = 0.
pub const SMALL_ANGLE: f64 = 1e-9;

/// Wrap an angle into the half-open interval (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// A planar rigid-body pose. `theta` is kept wrapped to (-pi, pi] by every
/// constructor and operation; if you write the field directly you own that
/// invariant (or call [`Pose2::normalized`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// Re-wrap theta. Useful after deserializing external data that may
    /// carry angles outside (-pi, pi].
    pub fn normalized(&self) -> Self {
        Pose2::new(self.x, self.y, self.theta)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Group composition: `self * other`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.theta,
        )
    }

    /// Relative pose `self^-1 * other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Logarithm map onto the tangent space at the identity.
    ///
    /// theta = pi is mapped to the principal branch (omega = pi), which keeps
    /// this a total, deterministic function on wrapped poses.
    pub fn log(&self) -> Tangent2 {
        let theta = self.theta;
        let (a, b) = v_coeffs(theta);
        let det = a * a + b * b;
        Tangent2 {
            rho_x: (a * self.x + b * self.y) / det,
            rho_y: (-b * self.x + a * self.y) / det,
            omega: theta,
        }
    }

    /// Adjoint matrix transporting tangent vectors across this pose:
    /// `Ad_p * xi = Log(p * Exp(xi) * p^-1)` to first order exactly.
    pub fn adjoint(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.y, s, c, -self.x, 0.0, 0.0, 1.0)
    }
}

/// An element of the Lie algebra se(2): translation rates first, then the
/// rotation rate. Tangent vectors live in a plain linear space, so no
/// component is ever wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent2 {
    pub rho_x: f64,
    pub rho_y: f64,
    pub omega: f64,
}

impl Tangent2 {
    pub fn new(rho_x: f64, rho_y: f64, omega: f64) -> Self {
        Tangent2 {
            rho_x,
            rho_y,
            omega,
        }
    }

    pub fn zero() -> Self {
        Tangent2::new(0.0, 0.0, 0.0)
    }

    /// Exponential map. Total: omega beyond (-pi, pi] simply winds, and the
    /// resulting pose angle is wrapped.
    pub fn exp(&self) -> Pose2 {
        let (a, b) = v_coeffs(self.omega);
        Pose2::new(
            a * self.rho_x - b * self.rho_y,
            b * self.rho_x + a * self.rho_y,
            self.omega,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.rho_x * self.rho_x + self.rho_y * self.rho_y + self.omega * self.omega).sqrt()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.rho_x, self.rho_y, self.omega)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Tangent2::new(v[0], v[1], v[2])
    }

    pub fn scale(&self, s: f64) -> Self {
        Tangent2::new(self.rho_x * s, self.rho_y * s, self.omega * s)
    }
}

/// The two independent entries of the SE(2) V-matrix,
/// `V = [[a, -b], [b, a]]` with `a = sin(t)/t`, `b = (1-cos(t))/t`.
fn v_coeffs(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        // Series expansions; at |theta| < 1e-9 the truncation error is far
        // below f64 resolution.
        (1.0 - theta * theta / 6.0, 0.5 * theta)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta)
    }
}

/// Positional Euclidean distance plus `w_r` times the wrapped absolute angle
/// difference: the sum of the two per-factor geodesics.
pub fn double_geodesic_distance(a: &Pose2, b: &Pose2, w_r: f64) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    // Circle distance written on the absolute difference so that swapping
    // the arguments returns the identical floating-point value.
    let d = (a.theta - b.theta).abs().rem_euclid(TAU);
    let ang = d.min(TAU - d);
    (dx * dx + dy * dy).sqrt() + w_r * ang
}

/// Norm of the relative pose in the tangent space at `a`:
/// `||Log(a^-1 b)||`. Matches the local geodesic up to second order.
pub fn tangent_distance(a: &Pose2, b: &Pose2) -> f64 {
    a.between(b).log().norm()
}
