//! Monte-Carlo execution of a returned plan through ground-truth noisy
//! dynamics: the judge that scores every planning mode on the same field.

use crate::BenchError;
use kite::geometry::Pose2;
use kite::planner::{ControlSegment, PlanResult};
use kite::systems::car::{CarControl, CarExecutor, NoiseCoeffs};
use kite::systems::pusher::{pusher_truth_step, PushControl};
use kite::systems::Scene;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Ground-truth stochastic rollout interface: how one control segment
/// unfolds from a state, which states collide, and which terminate in a
/// goal region.
pub trait StochasticExecutor {
    type State: Clone;
    type Control;

    /// True initial state of the system.
    fn start(&self) -> Self::State;

    /// Waypoints visited while applying `u` for `tau` from `x` (at least
    /// one; the last is the segment's end state).
    fn rollout_segment(
        &self,
        x: &Self::State,
        u: &Self::Control,
        tau: f64,
        rng: &mut dyn RngCore,
    ) -> Vec<Self::State>;

    /// Collision-free predicate.
    fn state_ok(&self, x: &Self::State) -> bool;

    /// Goal-region membership (any region).
    fn in_goal(&self, x: &Self::State) -> bool;
}

/// Monte-Carlo outcome over `n` rollouts.
#[derive(Debug, Clone)]
pub struct McOutcome<St> {
    /// Fraction of rollouts that stayed collision-free and ended in a goal.
    pub success_rate: f64,
    /// Fraction of rollouts that hit a collision at any waypoint.
    pub collision_rate: f64,
    /// Final state of every rollout (at the collision for collided runs).
    pub terminal_states: Vec<St>,
}

impl<St> McOutcome<St> {
    /// Standard error of the success-rate estimate.
    pub fn success_stderr(&self) -> f64 {
        let n = self.terminal_states.len() as f64;
        (self.success_rate * (1.0 - self.success_rate) / n).sqrt()
    }
}

/// Execute a solved plan's control sequence `n` times through the system's
/// ground-truth noisy dynamics.  A rollout succeeds when no visited
/// waypoint collides and the final state lies in a goal region; it stops at
/// the first collision.  Deterministic for a fixed seed.
pub fn monte_carlo_execute<St, E: StochasticExecutor>(
    plan: &PlanResult<St, E::Control>,
    system: &E,
    n: usize,
    seed: u64,
) -> Result<McOutcome<E::State>, BenchError> {
    if !plan.solved {
        return Err(BenchError::Unsolved);
    }
    assert!(n >= 1, "at least one rollout required");
    rollout_controls(system, &plan.segments, n, seed)
}

/// [`monte_carlo_execute`] on a bare control sequence (the plan-free core,
/// shared by tests that construct control tapes directly).
pub fn rollout_controls<E: StochasticExecutor>(
    system: &E,
    segments: &[ControlSegment<E::Control>],
    n: usize,
    seed: u64,
) -> Result<McOutcome<E::State>, BenchError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut successes = 0usize;
    let mut collisions = 0usize;
    let mut terminal_states = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = system.start();
        let mut collided = !system.state_ok(&x);
        if !collided {
            'plan: for seg in segments {
                for w in system.rollout_segment(&x, &seg.control, seg.duration, &mut rng) {
                    x = w;
                    if !system.state_ok(&x) {
                        collided = true;
                        break 'plan;
                    }
                }
            }
        }
        if collided {
            collisions += 1;
        } else if system.in_goal(&x) {
            successes += 1;
        }
        terminal_states.push(x);
    }
    Ok(McOutcome {
        success_rate: successes as f64 / n as f64,
        collision_rate: collisions as f64 / n as f64,
        terminal_states,
    })
}

/// Bicycle car under its scene's process noise: RK4 substeps with a
/// control-dependent Gaussian perturbation at each segment end.
pub struct CarTruthExecutor {
    pub scene: Scene,
    start: Pose2,
    executor: CarExecutor,
}

impl CarTruthExecutor {
    pub fn new(scene: Scene, start: Pose2) -> Result<Self, BenchError> {
        let constants = scene
            .car
            .ok_or_else(|| BenchError::BadSpec("scene has no car constants".into()))?;
        let executor = CarExecutor {
            wheelbase: constants.wheelbase,
            coeffs: NoiseCoeffs { alpha: constants.alpha, beta: constants.beta },
        };
        Ok(Self { scene, start, executor })
    }
}

impl StochasticExecutor for CarTruthExecutor {
    type State = Pose2;
    type Control = CarControl;

    fn start(&self) -> Pose2 {
        self.start
    }

    fn rollout_segment(
        &self,
        x: &Pose2,
        u: &CarControl,
        tau: f64,
        rng: &mut dyn RngCore,
    ) -> Vec<Pose2> {
        self.executor
            .execute_segment(x, u, tau, rng)
            .expect("well-formed plan segments integrate")
    }

    fn state_ok(&self, x: &Pose2) -> bool {
        self.scene.position_valid(x.x, x.y)
    }

    fn in_goal(&self, x: &Pose2) -> bool {
        self.scene.goals.iter().any(|g| g.contains(x))
    }
}

/// Planar pusher under its synthetic ground-truth step: one noisy pose
/// increment per push.
pub struct PusherTruthExecutor {
    pub scene: Scene,
    start: Pose2,
}

impl PusherTruthExecutor {
    pub fn new(scene: Scene, start: Pose2) -> Self {
        Self { scene, start }
    }
}

impl StochasticExecutor for PusherTruthExecutor {
    type State = Pose2;
    type Control = PushControl;

    fn start(&self) -> Pose2 {
        self.start
    }

    fn rollout_segment(
        &self,
        x: &Pose2,
        u: &PushControl,
        _tau: f64,
        rng: &mut dyn RngCore,
    ) -> Vec<Pose2> {
        vec![pusher_truth_step(x, u, rng)]
    }

    fn state_ok(&self, x: &Pose2) -> bool {
        self.scene.position_valid(x.x, x.y)
    }

    fn in_goal(&self, x: &Pose2) -> bool {
        self.scene.goals.iter().any(|g| g.contains(x))
    }
}
