//! Search-space adapters binding each system to the planner.
//!
//! - [`FlappySpace`]: deterministic gliding bird, integer-frame segments,
//!   inverse-clearance running cost, deviation-from-gap terminal measure.
//! - [`CarStateSpace`]: deterministic bicycle car under the double-geodesic
//!   pose metric with path-length running cost.
//! - [`CarBeliefSpace`]: Gaussian beliefs over the car pose, linearized
//!   covariance propagation, chance-constrained collision checks, Wasserstein
//!   running and terminal costs.

use super::chance::position_chance_valid;
use super::{GoalMode, HeuristicMode, PlanMode, PlannerConfig, SearchSpace, Segment};
use crate::belief::{w2_lie_approx, Se2Belief};
use crate::geometry::{double_geodesic_distance, Pose2};
use crate::systems::car::{car_process_q, linearize_bicycle, rk4_propagate, substep_count, CarControl};
use crate::systems::flappy::{flappy_step, FlappyLayout, FlappyState, BIRD_VX, MAX_CLEARANCE};
use crate::systems::{CarConstants, Scene, SystemError, MIN_SEGMENT_COST};
use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// Default weight of the heading gap (radians) against the position gap
/// (meters) in the pose metric and pose-goal regions.
pub const DEFAULT_ROTATION_WEIGHT: f64 = 1.0;

/// Flap decision held constant over a sampled number of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlapControl {
    pub flap: bool,
}

/// Deterministic gliding-bird space.  One control frame advances the bird a
/// fixed horizontal step; running cost accumulates the inverse clearance of
/// every visited frame, so passages near obstacles are expensive.
pub struct FlappySpace {
    pub layout: FlappyLayout,
    /// Longest sampled segment, in frames.
    pub max_frames: u32,
    /// Multiplies every running and terminal cost; exists so cost-scaling
    /// invariance can be exercised, normal use leaves it at 1.
    pub cost_scale: f64,
    heuristic: HeuristicMode,
}

impl FlappySpace {
    pub fn new(layout: FlappyLayout, config: &PlannerConfig) -> Self {
        assert_eq!(config.mode, PlanMode::State, "bird planning is deterministic");
        Self {
            layout,
            max_frames: 10,
            cost_scale: 1.0,
            heuristic: config.heuristic,
        }
    }

    pub fn with_cost_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0);
        self.cost_scale = scale;
        self
    }
}

impl SearchSpace for FlappySpace {
    type State = FlappyState;
    type Control = FlapControl;

    fn start(&self) -> FlappyState {
        self.layout.start
    }

    fn state_valid(&self, x: &FlappyState) -> bool {
        self.layout.valid(x)
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> FlappyState {
        FlappyState::new(
            rng.gen_range(0.0..=self.layout.screen_w),
            rng.gen_range(0.0..=self.layout.screen_h),
            rng.gen_range(crate::systems::flappy::VY_MIN..=crate::systems::flappy::VY_MAX),
        )
    }

    fn sample_control(&self, rng: &mut dyn RngCore) -> (FlapControl, f64) {
        let flap = rng.gen_bool(0.5);
        let frames = rng.gen_range(1..=self.max_frames);
        (FlapControl { flap }, frames as f64)
    }

    fn distance(&self, a: &FlappyState, b: &FlappyState) -> f64 {
        let dx = a.px - b.px;
        let dy = a.py - b.py;
        let dv = a.vy - b.vy;
        (dx * dx + dy * dy + dv * dv).sqrt()
    }

    fn propagate(&self, from: &FlappyState, control: &FlapControl, duration: f64) -> Option<Segment<FlappyState>> {
        let frames = duration.round() as u32;
        if frames == 0 {
            return None;
        }
        let mut x = *from;
        let mut cost = 0.0;
        let mut waypoints = Vec::with_capacity(frames as usize);
        for _ in 0..frames {
            x = flappy_step(&x, control.flap);
            if !self.layout.valid(&x) {
                return None;
            }
            cost += self.cost_scale * self.layout.frame_cost(&x);
            waypoints.push(x);
        }
        Some(Segment { end: x, cost: cost.max(MIN_SEGMENT_COST), waypoints })
    }

    fn goal_hit(&self, x: &FlappyState) -> bool {
        self.layout.goal_hit(x)
    }

    fn terminal_measure(&self, x: &FlappyState) -> f64 {
        self.cost_scale * self.layout.terminal_deviation(x)
    }

    fn heuristic(&self, x: &FlappyState) -> f64 {
        match self.heuristic {
            HeuristicMode::Zero => 0.0,
            HeuristicMode::EuclideanOverVmax => {
                // At least ceil(gap / step) more frames, each costing at
                // least the inverse of the largest representable clearance.
                let gap = self.layout.goal_x - x.px;
                if gap <= 0.0 {
                    return 0.0;
                }
                let frames = (gap / BIRD_VX).ceil();
                self.cost_scale * frames * (1.0 / (MAX_CLEARANCE + 1.0))
            }
        }
    }

    fn embedding_dim(&self) -> Option<usize> {
        Some(3)
    }

    fn embed(&self, x: &FlappyState, out: &mut [f64]) {
        out[0] = x.px;
        out[1] = x.py;
        out[2] = x.vy;
    }
}

fn car_constants(scene: &Scene) -> Result<CarConstants, SystemError> {
    scene
        .car
        .ok_or_else(|| SystemError::Scene("scene has no car constants".into()))
}

pub(crate) fn sample_pose(scene: &Scene, rng: &mut dyn RngCore) -> Pose2 {
    Pose2::new(
        rng.gen_range(scene.world.x_min..=scene.world.x_max),
        rng.gen_range(scene.world.y_min..=scene.world.y_max),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

fn sample_car_control(c: &CarConstants, rng: &mut dyn RngCore) -> (CarControl, f64) {
    let mag = rng.gen_range(c.v_min..=c.v_max);
    let v = if rng.gen_bool(0.5) { mag } else { -mag };
    let phi = rng.gen_range(-c.phi_max..=c.phi_max);
    // Duration in (0, max]: the unit draw lies in [0, 1).
    let u: f64 = rng.gen();
    let tau = c.max_segment_duration * (1.0 - u);
    (CarControl::new(v, phi), tau)
}

/// Largest position distance a pose inside the goal region can have from its
/// center, given the per-dimension region weights.
fn goal_position_slack(g: &crate::belief::PoseGoal) -> f64 {
    g.radius * (g.weights[0] + g.weights[1]).sqrt()
}

/// Lower bound on remaining running cost from position `(px, py)`: both the
/// double-geodesic and the Wasserstein step costs dominate the straight-line
/// position gap, so the gap to the closest goal region (minus its position
/// slack) is admissible under either cost.
pub(crate) fn position_gap_heuristic(scene: &Scene, px: f64, py: f64) -> f64 {
    scene
        .goals
        .iter()
        .map(|g| {
            let dx = px - g.center.x;
            let dy = py - g.center.y;
            ((dx * dx + dy * dy).sqrt() - goal_position_slack(g)).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Deterministic bicycle-car space under the double-geodesic pose metric.
/// Running cost is the metric path length accumulated at substep resolution.
pub struct CarStateSpace {
    pub scene: Scene,
    constants: CarConstants,
    start: Pose2,
    pub rotation_weight: f64,
    heuristic: HeuristicMode,
}

impl CarStateSpace {
    pub fn new(scene: Scene, start_index: usize, config: &PlannerConfig) -> Result<Self, SystemError> {
        let constants = car_constants(&scene)?;
        let start = *scene
            .starts
            .get(start_index)
            .ok_or_else(|| SystemError::Scene(format!("start index {start_index} out of range")))?;
        Ok(Self {
            scene,
            constants,
            start,
            rotation_weight: DEFAULT_ROTATION_WEIGHT,
            heuristic: config.heuristic,
        })
    }
}

impl SearchSpace for CarStateSpace {
    type State = Pose2;
    type Control = CarControl;

    fn start(&self) -> Pose2 {
        self.start
    }

    fn state_valid(&self, x: &Pose2) -> bool {
        self.scene.position_valid(x.x, x.y)
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Pose2 {
        sample_pose(&self.scene, rng)
    }

    fn sample_control(&self, rng: &mut dyn RngCore) -> (CarControl, f64) {
        sample_car_control(&self.constants, rng)
    }

    fn distance(&self, a: &Pose2, b: &Pose2) -> f64 {
        double_geodesic_distance(a, b, self.rotation_weight)
    }

    fn propagate(&self, from: &Pose2, control: &CarControl, duration: f64) -> Option<Segment<Pose2>> {
        let n = substep_count(duration);
        let dt = duration / n as f64;
        let waypoints = rk4_propagate(from, control, duration, dt, self.constants.wheelbase).ok()?;
        let mut cost = 0.0;
        let mut prev = *from;
        for p in &waypoints {
            if !self.scene.position_valid(p.x, p.y) {
                return None;
            }
            cost += double_geodesic_distance(&prev, p, self.rotation_weight);
            prev = *p;
        }
        let end = *waypoints.last().expect("propagation yields at least one substep");
        Some(Segment { end, cost: cost.max(MIN_SEGMENT_COST), waypoints })
    }

    fn goal_hit(&self, x: &Pose2) -> bool {
        self.scene.goals.iter().any(|g| g.contains(x))
    }

    fn terminal_measure(&self, x: &Pose2) -> f64 {
        self.scene.preferred().weighted_dist_sq(x).sqrt()
    }

    fn heuristic(&self, x: &Pose2) -> f64 {
        match self.heuristic {
            HeuristicMode::Zero => 0.0,
            HeuristicMode::EuclideanOverVmax => position_gap_heuristic(&self.scene, x.x, x.y),
        }
    }
}

/// Gaussian-belief bicycle-car space.  The covariance lives in the global
/// chart and is propagated substep-by-substep through the finite-difference
/// Jacobian of the integrator with control-dependent process noise; validity
/// is a per-substep chance constraint, and both the running cost and the
/// terminal measure are Wasserstein distances.
pub struct CarBeliefSpace {
    pub scene: Scene,
    constants: CarConstants,
    start: Se2Belief,
    pub p_free: f64,
    goal_mode: GoalMode,
    heuristic: HeuristicMode,
}

/// Initial pose covariance used when a scene does not override it: a few
/// centimeters and a couple of degrees of standard deviation.
pub fn default_initial_cov() -> Matrix3<f64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(1e-4, 1e-4, 1e-4))
}

/// Propagate a pose belief through one car control segment: RK4 substep
/// means, covariance through the finite-difference Jacobian plus
/// control-dependent process noise per substep.  Returns the per-substep
/// beliefs and the summed stepwise Wasserstein cost, or `None` when `keep`
/// rejects a substep (pass `|_| true` to re-propagate a fixed control
/// sequence for post-hoc evaluation).  This is the single source of truth
/// for belief-mode car dynamics, so planner segment costs and any
/// re-evaluation of a returned plan agree bit-for-bit.
pub fn car_belief_segment(
    from: &Se2Belief,
    control: &CarControl,
    duration: f64,
    constants: &CarConstants,
    mut keep: impl FnMut(&Se2Belief) -> bool,
) -> Option<(Vec<Se2Belief>, f64)> {
    let n = substep_count(duration);
    let dt = duration / n as f64;
    let poses = rk4_propagate(&from.mean, control, duration, dt, constants.wheelbase).ok()?;
    let mut cost = 0.0;
    let mut prev = from.clone();
    let mut waypoints = Vec::with_capacity(poses.len());
    let mut mean_prev = from.mean;
    for pose in &poses {
        let a = linearize_bicycle(&mean_prev, control, dt, constants.wheelbase);
        let q = car_process_q(control, dt, &constants.alpha, &constants.beta);
        let cov = a * prev.cov * a.transpose() + q;
        let b = Se2Belief::new(*pose, cov);
        if !keep(&b) {
            return None;
        }
        cost += w2_lie_approx(&prev, &b);
        waypoints.push(b.clone());
        mean_prev = *pose;
        prev = b;
    }
    Some((waypoints, cost))
}

impl CarBeliefSpace {
    pub fn new(
        scene: Scene,
        start_index: usize,
        initial_cov: Matrix3<f64>,
        config: &PlannerConfig,
    ) -> Result<Self, SystemError> {
        let constants = car_constants(&scene)?;
        let start_pose = *scene
            .starts
            .get(start_index)
            .ok_or_else(|| SystemError::Scene(format!("start index {start_index} out of range")))?;
        Ok(Self {
            scene,
            constants,
            start: Se2Belief::new(start_pose, initial_cov),
            p_free: config.p_free,
            goal_mode: config.goal_mode,
            heuristic: config.heuristic,
        })
    }

    fn chance_ok(&self, b: &Se2Belief) -> bool {
        let pos_cov = Matrix2::new(
            b.cov[(0, 0)],
            b.cov[(0, 1)],
            b.cov[(1, 0)],
            b.cov[(1, 1)],
        );
        position_chance_valid(&self.scene, b.mean.x, b.mean.y, &pos_cov, self.p_free)
    }
}

impl SearchSpace for CarBeliefSpace {
    type State = Se2Belief;
    type Control = CarControl;

    fn start(&self) -> Se2Belief {
        self.start.clone()
    }

    fn state_valid(&self, x: &Se2Belief) -> bool {
        self.chance_ok(x)
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Se2Belief {
        // Targets are Dirac beliefs at uniformly sampled poses; the belief
        // metric against them stays cheap (mean gap plus covariance trace).
        Se2Belief::dirac(sample_pose(&self.scene, rng))
    }

    fn sample_control(&self, rng: &mut dyn RngCore) -> (CarControl, f64) {
        sample_car_control(&self.constants, rng)
    }

    fn distance(&self, a: &Se2Belief, b: &Se2Belief) -> f64 {
        w2_lie_approx(a, b)
    }

    fn propagate(&self, from: &Se2Belief, control: &CarControl, duration: f64) -> Option<Segment<Se2Belief>> {
        let (waypoints, cost) =
            car_belief_segment(from, control, duration, &self.constants, |b| self.chance_ok(b))?;
        let end = waypoints.last().expect("propagation yields at least one substep").clone();
        Some(Segment { end, cost: cost.max(MIN_SEGMENT_COST), waypoints })
    }

    fn goal_hit(&self, x: &Se2Belief) -> bool {
        match self.goal_mode {
            GoalMode::MeanInRegion => self.scene.goals.iter().any(|g| g.contains(&x.mean)),
            GoalMode::Chance { p_goal } => self
                .scene
                .goals
                .iter()
                .any(|g| g.reach_lower_bound(x) >= p_goal),
        }
    }

    fn terminal_measure(&self, x: &Se2Belief) -> f64 {
        self.scene.preferred().w2_to_center(x)
    }

    fn heuristic(&self, x: &Se2Belief) -> f64 {
        match self.heuristic {
            HeuristicMode::Zero => 0.0,
            HeuristicMode::EuclideanOverVmax => {
                position_gap_heuristic(&self.scene, x.mean.x, x.mean.y)
            }
        }
    }
}
