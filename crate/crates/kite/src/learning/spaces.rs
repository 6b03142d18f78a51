//! Search-space adapters for planning with a learned pusher model.
//!
//! - [`PusherStateSpace`]: poses under the double-geodesic metric, moved by
//!   the model's mean prediction only (the uncertainty head is ignored).
//! - [`PusherBeliefSpace`]: Gaussian pose beliefs propagated through the
//!   mean and variance heads, with chance-constrained collision checks and
//!   Wasserstein running and terminal costs.

use super::{
    encode_push_control, learned_belief_propagate_lie, sample_push_control, CompositionRule,
    TransitionModel,
};
use crate::belief::{w2_lie_approx, Se2Belief};
use crate::geometry::{double_geodesic_distance, Pose2, Tangent2};
use crate::planner::spaces::{position_gap_heuristic, sample_pose, DEFAULT_ROTATION_WEIGHT};
use crate::planner::{
    position_chance_valid, GoalMode, HeuristicMode, PlannerConfig, SearchSpace, Segment,
};
use crate::systems::pusher::PushControl;
use crate::systems::{PusherConstants, Scene, SystemError, MIN_SEGMENT_COST};
use nalgebra::{DVector, Matrix2, Matrix3};
use rand::RngCore;

/// Every push counts as one unit of abstract duration; the planner samples
/// the push parameters, not how long it takes.
pub const PUSH_DURATION: f64 = 1.0;

/// One learned-model belief step: the predicted mean increment moves the
/// belief, the predicted variance (with adjoint transport) grows its
/// covariance.  Returns the new belief and the stepwise Wasserstein cost.
/// Single source of truth for belief-mode push dynamics, shared by the
/// search space and post-hoc plan evaluation.
pub fn learned_push_step(
    from: &Se2Belief,
    model: &TransitionModel,
    control: &PushControl,
    constants: &PusherConstants,
) -> (Se2Belief, f64) {
    let input = encode_push_control(control, constants);
    let b = learned_belief_propagate_lie(from, model, &input);
    let cost = w2_lie_approx(from, &b);
    (b, cost)
}

fn pusher_constants(scene: &Scene) -> Result<PusherConstants, SystemError> {
    scene
        .pusher
        .ok_or_else(|| SystemError::Scene("scene has no pusher constants".into()))
}

fn check_model(model: &TransitionModel) -> Result<(), SystemError> {
    if model.composition != CompositionRule::LieExponential {
        return Err(SystemError::Scene(
            "pusher planning needs a pose-increment (lie_exponential) model".into(),
        ));
    }
    if model.mlp.in_dim() != 6 || model.mlp.out_dim() != 3 {
        return Err(SystemError::Scene(format!(
            "pusher model must map 6 inputs to 3 outputs, got {} to {}",
            model.mlp.in_dim(),
            model.mlp.out_dim()
        )));
    }
    Ok(())
}

/// Deterministic pusher space driven by the learned mean displacement; the
/// baseline planner that ignores predicted uncertainty.
pub struct PusherStateSpace {
    pub scene: Scene,
    constants: PusherConstants,
    model: TransitionModel,
    start: Pose2,
    pub rotation_weight: f64,
    heuristic: HeuristicMode,
}

impl PusherStateSpace {
    pub fn new(
        scene: Scene,
        start_index: usize,
        model: TransitionModel,
        config: &PlannerConfig,
    ) -> Result<Self, SystemError> {
        let constants = pusher_constants(&scene)?;
        check_model(&model)?;
        let start = *scene
            .starts
            .get(start_index)
            .ok_or_else(|| SystemError::Scene(format!("start index {start_index} out of range")))?;
        Ok(Self {
            scene,
            constants,
            model,
            start,
            rotation_weight: DEFAULT_ROTATION_WEIGHT,
            heuristic: config.heuristic,
        })
    }

    /// Mean pose increment the model predicts for a push.
    fn mean_increment(&self, control: &PushControl) -> Tangent2 {
        let (dx, _) = self.model.forward(&encode_push_control(control, &self.constants));
        Tangent2::new(dx[0], dx[1], dx[2])
    }
}

impl SearchSpace for PusherStateSpace {
    type State = Pose2;
    type Control = PushControl;

    fn start(&self) -> Pose2 {
        self.start
    }

    fn state_valid(&self, x: &Pose2) -> bool {
        self.scene.position_valid(x.x, x.y)
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Pose2 {
        sample_pose(&self.scene, rng)
    }

    fn sample_control(&self, rng: &mut dyn RngCore) -> (PushControl, f64) {
        (sample_push_control(&self.constants, rng), PUSH_DURATION)
    }

    fn distance(&self, a: &Pose2, b: &Pose2) -> f64 {
        double_geodesic_distance(a, b, self.rotation_weight)
    }

    fn propagate(&self, from: &Pose2, control: &PushControl, _duration: f64) -> Option<Segment<Pose2>> {
        let xi = self.mean_increment(control);
        let mid = from.compose(&xi.scale(0.5).exp());
        let end = from.compose(&xi.exp());
        if !self.scene.position_valid(mid.x, mid.y) || !self.scene.position_valid(end.x, end.y) {
            return None;
        }
        let cost = double_geodesic_distance(from, &end, self.rotation_weight);
        Some(Segment { end, cost: cost.max(MIN_SEGMENT_COST), waypoints: vec![mid, end] })
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

/// Belief-space pusher: the learned mean moves the belief, the learned
/// variance and the adjoint transport grow its covariance, and validity is a
/// chance constraint on the object's position.
pub struct PusherBeliefSpace {
    pub scene: Scene,
    constants: PusherConstants,
    model: TransitionModel,
    start: Se2Belief,
    pub p_free: f64,
    goal_mode: GoalMode,
    heuristic: HeuristicMode,
}

impl PusherBeliefSpace {
    pub fn new(
        scene: Scene,
        start_index: usize,
        initial_cov: Matrix3<f64>,
        model: TransitionModel,
        config: &PlannerConfig,
    ) -> Result<Self, SystemError> {
        let constants = pusher_constants(&scene)?;
        check_model(&model)?;
        let start_pose = *scene
            .starts
            .get(start_index)
            .ok_or_else(|| SystemError::Scene(format!("start index {start_index} out of range")))?;
        Ok(Self {
            scene,
            constants,
            model,
            start: Se2Belief::new(start_pose, initial_cov),
            p_free: config.p_free,
            goal_mode: config.goal_mode,
            heuristic: config.heuristic,
        })
    }

    /// The belief covariance lives in the tangent space at the mean, so the
    /// global position marginal is the position block rotated by the mean
    /// heading.
    fn chance_ok(&self, b: &Se2Belief) -> bool {
        let r = b.mean.rotation();
        let body = Matrix2::new(
            b.cov[(0, 0)],
            b.cov[(0, 1)],
            b.cov[(1, 0)],
            b.cov[(1, 1)],
        );
        let pos_cov = r * body * r.transpose();
        position_chance_valid(&self.scene, b.mean.x, b.mean.y, &pos_cov, self.p_free)
    }

    fn model_input(&self, control: &PushControl) -> DVector<f64> {
        encode_push_control(control, &self.constants)
    }
}

impl SearchSpace for PusherBeliefSpace {
    type State = Se2Belief;
    type Control = PushControl;

    fn start(&self) -> Se2Belief {
        self.start.clone()
    }

    fn state_valid(&self, x: &Se2Belief) -> bool {
        self.chance_ok(x)
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Se2Belief {
        Se2Belief::dirac(sample_pose(&self.scene, rng))
    }

    fn sample_control(&self, rng: &mut dyn RngCore) -> (PushControl, f64) {
        (sample_push_control(&self.constants, rng), PUSH_DURATION)
    }

    fn distance(&self, a: &Se2Belief, b: &Se2Belief) -> f64 {
        w2_lie_approx(a, b)
    }

    fn propagate(&self, from: &Se2Belief, control: &PushControl, _duration: f64) -> Option<Segment<Se2Belief>> {
        let (b, cost) = learned_push_step(from, &self.model, control, &self.constants);
        // The mean's halfway pose must be collision-free deterministically;
        // the endpoint belief must satisfy the chance constraint.
        let (dx, _) = self.model.forward(&self.model_input(control));
        let mid = from
            .mean
            .compose(&Tangent2::new(dx[0], dx[1], dx[2]).scale(0.5).exp());
        if !self.scene.position_valid(mid.x, mid.y) || !self.chance_ok(&b) {
            return None;
        }
        Some(Segment { end: b.clone(), cost: cost.max(MIN_SEGMENT_COST), waypoints: vec![b] })
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::PoseGoal;
    use crate::learning::test_support::trained_pusher_model;
    use crate::learning::{InputMode, Mlp};
    use crate::planner::{kite_plan, MetricKind, PlanMode, PlannerConfig};
    use crate::systems::{Obstacle, WorldBounds};
    use nalgebra::Vector3;

    fn table_scene(obstacles: Vec<Obstacle>) -> Scene {
        Scene {
            name: "unit-table".into(),
            world: WorldBounds { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 },
            obstacles,
            goals: vec![PoseGoal {
                center: Pose2::new(0.7, 0.7, 0.0),
                radius: 0.07,
                weights: [1.0, 1.0, 25.0],
            }],
            preferred_goal: 0,
            starts: vec![Pose2::new(0.2, 0.2, 0.0)],
            robot_radius: 0.05,
            car: None,
            pusher: Some(PusherConstants::default()),
        }
    }

    fn push_config(mode: PlanMode, max_iters: u64, seed: u64) -> PlannerConfig {
        PlannerConfig {
            terminal_weight: 10.0,
            mode,
            metric: if mode == PlanMode::Belief { MetricKind::W2 } else { MetricKind::L2 },
            goal_mode: GoalMode::MeanInRegion,
            heuristic: HeuristicMode::Zero,
            max_iters,
            rng_seed: seed,
            ..PlannerConfig::default()
        }
    }

    fn tight_cov() -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-4))
    }

    #[test]
    fn spaces_validate_scene_and_model() {
        let (model, _) = trained_pusher_model();
        let config = push_config(PlanMode::State, 10, 1);
        let mut no_pusher = table_scene(vec![]);
        no_pusher.pusher = None;
        assert!(PusherStateSpace::new(no_pusher, 0, model.clone(), &config).is_err());
        assert!(PusherStateSpace::new(table_scene(vec![]), 9, model.clone(), &config).is_err());

        let additive = TransitionModel {
            mlp: Mlp::zeroed(&[6, 4], 4, 3),
            composition: CompositionRule::Additive,
            input_mode: InputMode::ControlOnly,
        };
        assert!(PusherStateSpace::new(table_scene(vec![]), 0, additive, &config).is_err());
        let wrong_dims = TransitionModel {
            mlp: Mlp::zeroed(&[5, 4], 4, 3),
            composition: CompositionRule::LieExponential,
            input_mode: InputMode::ControlOnly,
        };
        assert!(
            PusherBeliefSpace::new(table_scene(vec![]), 0, tight_cov(), wrong_dims, &config)
                .is_err()
        );
    }

    #[test]
    fn state_space_plans_pushes_to_the_goal() {
        let (model, _) = trained_pusher_model();
        let config = push_config(PlanMode::State, 20_000, 3);
        let space = PusherStateSpace::new(table_scene(vec![]), 0, model.clone(), &config).unwrap();
        let result = kite_plan(&space, &config).unwrap();
        assert!(result.solved, "pusher plan did not reach the goal");
        assert_eq!(result.trajectory[0], space.start());

        // Replaying the control tape reproduces the stored states and costs.
        let mut x = space.start();
        let mut running = 0.0;
        for (i, seg) in result.segments.iter().enumerate() {
            assert_eq!(seg.duration, PUSH_DURATION);
            let s = space.propagate(&x, &seg.control, seg.duration).expect("replay segment valid");
            running += s.cost;
            x = s.end;
            assert_eq!(x, result.trajectory[i + 1]);
        }
        assert!((running - result.running_cost).abs() <= 1e-9);
        assert!(space.goal_hit(&x));
        let term = config.terminal_weight * space.terminal_measure(&x);
        assert!((result.terminal_cost - term).abs() <= 1e-9);
    }

    #[test]
    fn belief_space_plan_reaches_goal_while_tracking_uncertainty() {
        let (model, _) = trained_pusher_model();
        let config = push_config(PlanMode::Belief, 20_000, 5);
        let space =
            PusherBeliefSpace::new(table_scene(vec![]), 0, tight_cov(), model.clone(), &config)
                .unwrap();
        let result = kite_plan(&space, &config).unwrap();
        assert!(result.solved, "belief-space pusher plan did not reach the goal");

        let end = result.trajectory.last().unwrap();
        // Every push injects process noise, so uncertainty must have grown
        // over the initial covariance.
        assert!(end.trace() > 2.0 * tight_cov().trace());
        let term = config.terminal_weight * space.terminal_measure(end);
        assert!((result.terminal_cost - term).abs() <= 1e-9);
        assert!((term - config.terminal_weight * space.scene.preferred().w2_to_center(end)).abs() <= 1e-12);

        // Replay: belief propagation is deterministic, so the tape
        // reproduces the trajectory exactly.
        let mut b = space.start();
        let mut running = 0.0;
        for (i, seg) in result.segments.iter().enumerate() {
            let s = space.propagate(&b, &seg.control, seg.duration).expect("replay segment valid");
            running += s.cost;
            b = s.end;
            assert_eq!(b.mean, result.trajectory[i + 1].mean);
            assert_eq!(b.cov, result.trajectory[i + 1].cov);
        }
        assert!((running - result.running_cost).abs() <= 1e-9);
        assert!(space.goal_hit(&b));
    }

    #[test]
    fn chance_check_rotates_the_position_marginal_with_heading() {
        let (model, _) = trained_pusher_model();
        let mut scene = table_scene(vec![Obstacle::Circle { cx: 0.78, cy: 0.5, radius: 0.05 }]);
        scene.robot_radius = 0.0;
        let config = push_config(PlanMode::Belief, 10, 1);
        let space =
            PusherBeliefSpace::new(scene, 0, tight_cov(), model.clone(), &config).unwrap();
        assert_eq!(config.p_free, 0.99);

        // Lateral (body-y) spread is wide, longitudinal tight.  Facing the
        // obstacle the wide axis runs tangentially; heading 90 degrees turns
        // it onto the obstacle normal and the same margin now fails.
        let cov = Matrix3::from_diagonal(&Vector3::new(1e-6, 0.01, 1e-6));
        let facing = Se2Belief::new(Pose2::new(0.6, 0.5, 0.0), cov);
        let sideways =
            Se2Belief::new(Pose2::new(0.6, 0.5, std::f64::consts::FRAC_PI_2), cov);
        assert!(space.state_valid(&facing));
        assert!(!space.state_valid(&sideways));
    }

    #[test]
    fn belief_goal_modes_disagree_on_diffuse_beliefs() {
        let (model, _) = trained_pusher_model();
        let mean_cfg = push_config(PlanMode::Belief, 10, 1);
        let mut chance_cfg = push_config(PlanMode::Belief, 10, 1);
        chance_cfg.goal_mode = GoalMode::Chance { p_goal: 0.9 };
        let mean_space =
            PusherBeliefSpace::new(table_scene(vec![]), 0, tight_cov(), model.clone(), &mean_cfg)
                .unwrap();
        let chance_space =
            PusherBeliefSpace::new(table_scene(vec![]), 0, tight_cov(), model.clone(), &chance_cfg)
                .unwrap();

        let goal_center = mean_space.scene.preferred().center;
        let sharp = Se2Belief::new(goal_center, tight_cov());
        let diffuse = Se2Belief::new(
            goal_center,
            Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.01)),
        );
        assert!(mean_space.goal_hit(&sharp));
        assert!(chance_space.goal_hit(&sharp));
        assert!(mean_space.goal_hit(&diffuse));
        assert!(!chance_space.goal_hit(&diffuse));
    }
}
