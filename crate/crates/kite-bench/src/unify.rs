//! Unified cost measurement: every returned plan — whatever space it was
//! searched in — is re-propagated as a Gaussian belief through the system's
//! belief dynamics, and scored by the summed stepwise Wasserstein cost plus
//! the terminal Wasserstein distance to the preferred goal.  Plans that
//! ignored uncertainty thus pay for the covariance they actually incur.

use crate::BenchError;
use kite::belief::{PoseGoal, Se2Belief};
use kite::learning::spaces::learned_push_step;
use kite::learning::TransitionModel;
use kite::planner::spaces::car_belief_segment;
use kite::planner::{ControlSegment, PlanResult};
use kite::systems::car::CarControl;
use kite::systems::pusher::{push_mean, push_truth_q, PushControl};
use kite::systems::{lie_belief_propagate, CarConstants, PusherConstants, MIN_SEGMENT_COST};

/// Belief dynamics used for post-hoc plan measurement: the start belief,
/// one control segment's belief update with its stepwise Wasserstein cost
/// (un-clamped), and the terminal Wasserstein measure.
pub trait BeliefDynamics {
    type Control;

    fn start(&self) -> Se2Belief;

    /// Propagate through one segment; `None` only when the underlying
    /// integrator rejects the control (never for segments a planner
    /// returned).
    fn segment(&self, from: &Se2Belief, u: &Self::Control, tau: f64) -> Option<(Se2Belief, f64)>;

    /// Unweighted terminal Wasserstein distance (to the preferred goal).
    fn terminal_w2(&self, b: &Se2Belief) -> f64;
}

/// Re-propagate a solved plan's control sequence and return the terminal
/// belief together with (running stepwise-W2 cost, terminal W2).  Each
/// segment's cost receives the same positive floor the planners apply, so a
/// belief-mode plan measures identically to its recorded costs.
pub fn unify_rollout<St, D: BeliefDynamics>(
    plan: &PlanResult<St, D::Control>,
    system: &D,
) -> Result<(Se2Belief, f64, f64), BenchError> {
    if !plan.solved {
        return Err(BenchError::Unsolved);
    }
    let mut b = system.start();
    let mut running = 0.0;
    for seg in &plan.segments {
        let (next, cost) = system
            .segment(&b, &seg.control, seg.duration)
            .ok_or_else(|| BenchError::Eval("segment re-propagation rejected a control".into()))?;
        running += cost.max(MIN_SEGMENT_COST);
        b = next;
    }
    let terminal = system.terminal_w2(&b);
    Ok((b, running, terminal))
}

/// The unified quality measure: (running W2 cost, terminal W2 cost).
pub fn unify_cost<St, D: BeliefDynamics>(
    plan: &PlanResult<St, D::Control>,
    system: &D,
) -> Result<(f64, f64), BenchError> {
    unify_rollout(plan, system).map(|(_, running, terminal)| (running, terminal))
}

/// Bicycle-car belief dynamics under the scene's process-noise constants —
/// the same propagation the belief-space planner searches.
pub struct CarUnifiedDynamics {
    pub constants: CarConstants,
    pub start: Se2Belief,
    pub goal: PoseGoal,
}

impl BeliefDynamics for CarUnifiedDynamics {
    type Control = CarControl;

    fn start(&self) -> Se2Belief {
        self.start.clone()
    }

    fn segment(&self, from: &Se2Belief, u: &CarControl, tau: f64) -> Option<(Se2Belief, f64)> {
        let (waypoints, cost) = car_belief_segment(from, u, tau, &self.constants, |_| true)?;
        Some((waypoints.last().expect("at least one substep").clone(), cost))
    }

    fn terminal_w2(&self, b: &Se2Belief) -> f64 {
        self.goal.w2_to_center(b)
    }
}

/// Learned pusher belief dynamics — the mean and variance heads of a
/// trained transition model, exactly as the belief-space planner uses them.
pub struct LearnedPushUnifiedDynamics {
    pub model: TransitionModel,
    pub constants: PusherConstants,
    pub start: Se2Belief,
    pub goal: PoseGoal,
}

impl BeliefDynamics for LearnedPushUnifiedDynamics {
    type Control = PushControl;

    fn start(&self) -> Se2Belief {
        self.start.clone()
    }

    fn segment(&self, from: &Se2Belief, u: &PushControl, _tau: f64) -> Option<(Se2Belief, f64)> {
        Some(learned_push_step(from, &self.model, u, &self.constants))
    }

    fn terminal_w2(&self, b: &Se2Belief) -> f64 {
        self.goal.w2_to_center(b)
    }
}

/// Ground-truth pusher belief dynamics: the synthetic push's exact first
/// and second moments.  Scores learned-model plans against reality rather
/// than against the model that produced them.
pub struct TruthPushUnifiedDynamics {
    pub start: Se2Belief,
    pub goal: PoseGoal,
}

impl BeliefDynamics for TruthPushUnifiedDynamics {
    type Control = PushControl;

    fn start(&self) -> Se2Belief {
        self.start.clone()
    }

    fn segment(&self, from: &Se2Belief, u: &PushControl, _tau: f64) -> Option<(Se2Belief, f64)> {
        let next = lie_belief_propagate(from, &push_mean(u), &push_truth_q(u));
        let cost = kite::belief::w2_lie_approx(from, &next);
        Some((next, cost))
    }

    fn terminal_w2(&self, b: &Se2Belief) -> f64 {
        self.goal.w2_to_center(b)
    }
}
