//! Benchmark dynamical systems: frame-based bird hopper, kinematic bicycle
//! car, and a synthetic stochastic planar pusher, plus the covariance
//! propagation rules shared by all belief-space variants and the JSON scene
//! schema used by the benchmark harness.

pub mod car;
pub mod flappy;
pub mod pusher;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{GaussianBelief, PoseGoal, Se2Belief};
use crate::geometry::{Pose2, Tangent2};

/// Floor on the running cost of any propagated segment. Cost-bound pruning
/// is only sound when every segment costs a strictly positive amount, so
/// cost evaluators add this floor per substep.
pub const MIN_SEGMENT_COST: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("steering magnitude {0} must be below pi/2")]
    SteeringOutOfRange(f64),
    #[error("segment duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Axis-aligned workspace rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl WorldBounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Distance to the nearest wall; negative outside the rectangle.
    pub fn margin(&self, x: f64, y: f64) -> f64 {
        (x - self.x_min)
            .min(self.x_max - x)
            .min(y - self.y_min)
            .min(self.y_max - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { cx: f64, cy: f64, radius: f64 },
    Rect { x: f64, y: f64, w: f64, h: f64 },
}

impl Obstacle {
    /// Distance from a point to the obstacle boundary; negative inside.
    pub fn clearance(&self, px: f64, py: f64) -> f64 {
        match *self {
            Obstacle::Circle { cx, cy, radius } => {
                ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - radius
            }
            Obstacle::Rect { x, y, w, h } => {
                let dx = (x - px).max(px - (x + w));
                let dy = (y - py).max(py - (y + h));
                if dx > 0.0 || dy > 0.0 {
                    (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
                } else {
                    // Inside: negative distance to the closest edge.
                    dx.max(dy)
                }
            }
        }
    }
}

/// Per-scene constants for the bicycle car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarConstants {
    pub wheelbase: f64,
    /// |u_v| is sampled in [v_min, v_max] with either sign.
    pub v_min: f64,
    pub v_max: f64,
    pub phi_max: f64,
    pub max_segment_duration: f64,
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
}

impl Default for CarConstants {
    fn default() -> Self {
        CarConstants {
            wheelbase: 0.3,
            v_min: 0.15,
            v_max: 1.0,
            phi_max: 0.9,
            max_segment_duration: 2.0,
            alpha: [1.0e-3, 1.0e-3, 4.0e-4],
            beta: [4.0e-4, 4.0e-4, 2.4e-3],
        }
    }
}

/// Per-scene constants for the planar pusher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PusherConstants {
    pub max_push_dist: f64,
}

impl Default for PusherConstants {
    fn default() -> Self {
        PusherConstants { max_push_dist: 0.1 }
    }
}

/// A planning scene: workspace, obstacles, goal regions, and start poses.
/// Loaded from JSON; field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub world: WorldBounds,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub goals: Vec<PoseGoal>,
    /// Index into `goals` of the region the terminal cost is aimed at.
    #[serde(default)]
    pub preferred_goal: usize,
    pub starts: Vec<Pose2>,
    /// Robot footprint radius used to inflate obstacles and inset walls.
    #[serde(default)]
    pub robot_radius: f64,
    #[serde(default)]
    pub car: Option<CarConstants>,
    #[serde(default)]
    pub pusher: Option<PusherConstants>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Scene, SystemError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &std::path::Path) -> Result<Scene, SystemError> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        if self.world.x_min >= self.world.x_max || self.world.y_min >= self.world.y_max {
            return Err(SystemError::Scene("world bounds are empty".into()));
        }
        if self.goals.is_empty() {
            return Err(SystemError::Scene("at least one goal region required".into()));
        }
        if self.preferred_goal >= self.goals.len() {
            return Err(SystemError::Scene(format!(
                "preferred_goal {} out of range ({} goals)",
                self.preferred_goal,
                self.goals.len()
            )));
        }
        if self.starts.is_empty() {
            return Err(SystemError::Scene("at least one start pose required".into()));
        }
        for (i, g) in self.goals.iter().enumerate() {
            if g.radius <= 0.0 {
                return Err(SystemError::Scene(format!("goal {i} has non-positive radius")));
            }
        }
        if self.robot_radius < 0.0 {
            return Err(SystemError::Scene("robot_radius must be non-negative".into()));
        }
        Ok(())
    }

    /// Clearance of a point robot of radius `robot_radius`: distance to the
    /// nearest obstacle boundary or wall after inflation. Negative when in
    /// collision.
    pub fn clearance(&self, px: f64, py: f64) -> f64 {
        let mut c = self.world.margin(px, py);
        for ob in &self.obstacles {
            c = c.min(ob.clearance(px, py));
        }
        c - self.robot_radius
    }

    pub fn position_valid(&self, px: f64, py: f64) -> bool {
        self.clearance(px, py) >= 0.0
    }

    pub fn preferred(&self) -> &PoseGoal {
        &self.goals[self.preferred_goal]
    }
}

/// Covariance update for systems linearized in a global chart:
/// `P' = A P Aᵀ + Q`, with the mean replaced by the propagated state.
pub fn euclidean_belief_propagate(
    b: &GaussianBelief,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    new_mean: DVector<f64>,
) -> GaussianBelief {
    GaussianBelief::new(new_mean, a * &b.cov * a.transpose() + q)
}

/// Covariance update for pose beliefs expressed in the tangent space at the
/// mean: the relative motion `xi` transports the covariance by the adjoint
/// of its inverse before process noise is added,
/// `P' = Ad_{Exp(-xi)} P Ad_{Exp(-xi)}ᵀ + Q`.
pub fn lie_belief_propagate(b: &Se2Belief, xi: &Tangent2, q: &Matrix3<f64>) -> Se2Belief {
    let ad = xi.scale(-1.0).exp().adjoint();
    let cov = ad * b.cov * ad.transpose() + q;
    Se2Belief::new(b.mean.compose(&xi.exp()), cov)
}
