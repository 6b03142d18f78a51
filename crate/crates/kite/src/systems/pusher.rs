//! Synthetic stochastic planar pusher: a fully specified ground-truth
//! displacement model standing in for contact physics. A push is described
//! by the contacted side, the lateral offset along that side, and the push
//! distance; outcomes are object-frame pose increments with side-dependent
//! noise (two stable sides, two "rolling" sides with five-fold noise).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::sample_tangent_with_sqrt;
use crate::geometry::{Pose2, Tangent2};

/// Sides whose pushes tend to roll the object, inflating the noise.
pub const ROLLING_NOISE_SCALE: f64 = 5.0;

/// Mean-model gains: forward motion per unit push distance, lateral drift
/// and rotation per unit offset-times-distance.
pub const PUSH_GAIN_FORWARD: f64 = 0.85;
pub const PUSH_GAIN_DRIFT: f64 = 0.3;
pub const PUSH_GAIN_SPIN: f64 = 2.0;

/// Noise floor and growth (standard deviations, object frame).
pub const NOISE_POS_FLOOR: f64 = 0.004;
pub const NOISE_POS_RATE: f64 = 0.06;
pub const NOISE_ANG_FLOOR: f64 = 0.008;
pub const NOISE_ANG_RATE: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushControl {
    /// Contacted side, 0..=3, counted counterclockwise; pushing side `s`
    /// moves the object along the object-frame direction s * 90 degrees.
    pub side: u8,
    /// Lateral offset along the contacted side, normalized to [-1, 1].
    pub offset: f64,
    /// Push distance in meters.
    pub dist: f64,
}

impl PushControl {
    pub fn new(side: u8, offset: f64, dist: f64) -> Self {
        PushControl { side, offset, dist }
    }

    pub fn in_bounds(&self, max_dist: f64) -> bool {
        self.side < 4
            && self.offset.abs() <= 1.0
            && self.dist >= 0.0
            && self.dist <= max_dist
    }

    pub fn is_rolling_side(&self) -> bool {
        self.side == 1 || self.side == 3
    }
}

/// Mean object-frame displacement of a push: forward motion along the side
/// direction, lateral drift and spin both proportional to offset x distance
/// (so a zero-distance push moves nothing).
pub fn push_mean(u: &PushControl) -> Tangent2 {
    let angle = f64::from(u.side) * std::f64::consts::FRAC_PI_2;
    let (dir_x, dir_y) = (angle.cos(), angle.sin());
    // 90-degree rotation of the push direction.
    let (perp_x, perp_y) = (-dir_y, dir_x);
    let drift = PUSH_GAIN_DRIFT * u.offset * u.dist;
    Tangent2::new(
        PUSH_GAIN_FORWARD * u.dist * dir_x + drift * perp_x,
        PUSH_GAIN_FORWARD * u.dist * dir_y + drift * perp_y,
        PUSH_GAIN_SPIN * u.offset * u.dist,
    )
}

/// Per-dimension noise standard deviations in the object frame; rolling
/// sides are five times noisier, and the floor keeps zero-distance pushes
/// stochastic.
pub fn push_noise_std(u: &PushControl) -> [f64; 3] {
    let scale = if u.is_rolling_side() { ROLLING_NOISE_SCALE } else { 1.0 };
    let pos = scale * (NOISE_POS_FLOOR + NOISE_POS_RATE * u.dist);
    let ang = scale * (NOISE_ANG_FLOOR + NOISE_ANG_RATE * u.dist);
    [pos, pos, ang]
}

/// Ground-truth process covariance of one push (diagonal, object frame).
pub fn push_truth_q(u: &PushControl) -> Matrix3<f64> {
    let s = push_noise_std(u);
    Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]))
}

/// One stochastic push: object-frame increment mean + Gaussian noise,
/// composed onto the pose through the exponential map.
pub fn pusher_truth_step<R: Rng + ?Sized>(x: &Pose2, u: &PushControl, rng: &mut R) -> Pose2 {
    let s = push_noise_std(u);
    let sq = Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let noise = sample_tangent_with_sqrt(&sq, rng);
    let mu = push_mean(u);
    let delta = Tangent2::new(
        mu.rho_x + noise.x,
        mu.rho_y + noise.y,
        mu.omega + noise.z,
    );
    x.compose(&delta.exp())
}
