//! Gaussian beliefs and the 2-Wasserstein machinery built on them: SPD
//! square roots, closed-form distances (Euclidean, SE(2) tangent-space
//! approximation, and the Dirac-goal special case), plus the goal-reaching
//! probability lower bounds used as terminal costs and audit quantities.
//!
//! Covariances are symmetrized and eigenvalue-clamped on construction, so
//! downstream code can assume symmetric PSD matrices throughout.

use crate::geometry::{tangent_distance, Pose2};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("shape matrix is singular or not positive definite")]
    SingularShape,
}

/// A Gaussian over a Euclidean state space (the chart is the space itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Symmetrizes and PSD-clamps the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(mean.len(), cov.nrows(), "mean/cov dimension mismatch");
        assert_eq!(cov.nrows(), cov.ncols(), "covariance must be square");
        GaussianBelief {
            mean,
            cov: symmetrize_psd_dyn(&cov),
        }
    }

    pub fn dirac(mean: DVector<f64>) -> Self {
        let d = mean.len();
        GaussianBelief {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        sqrtm_spd(&self.cov).expect("covariance is symmetric by construction")
    }

    /// Draw one sample given a precomputed covariance square root.
    pub fn sample_with_sqrt<R: Rng + ?Sized>(
        &self,
        sqrt_cov: &DMatrix<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.mean + sqrt_cov * z
    }
}

/// A Gaussian over SE(2): mean pose plus a 3x3 covariance expressed in the
/// chart the owning system propagates in (tangent space at the mean for the
/// Lie update, global (x, y, theta) coordinates for the linearized update).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se2Belief {
    pub mean: Pose2,
    pub cov: Matrix3<f64>,
}

impl Se2Belief {
    pub fn new(mean: Pose2, cov: Matrix3<f64>) -> Self {
        Se2Belief {
            mean,
            cov: symmetrize_psd3(&cov),
        }
    }

    pub fn dirac(mean: Pose2) -> Self {
        Se2Belief {
            mean,
            cov: Matrix3::zeros(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

fn max_asymmetry_dyn(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetrize, then clamp any (numerically) negative eigenvalue to zero.
/// Construction from `A P A^T + Q` keeps covariances PSD up to rounding, so
/// anything below -1e-10 indicates corrupted input.
pub fn symmetrize_psd_dyn(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let min = eigs.min();
    debug_assert!(min >= -1e-10, "covariance has eigenvalue {min}");
    if min >= 0.0 {
        return sym;
    }
    let decomp = nalgebra::SymmetricEigen::new(sym);
    let clamped = decomp.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &decomp.eigenvectors
        * DMatrix::from_diagonal(&clamped)
        * decomp.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

pub fn symmetrize_psd3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let min = eigs.min();
    debug_assert!(min >= -1e-10, "covariance has eigenvalue {min}");
    if min >= 0.0 {
        return sym;
    }
    let decomp = nalgebra::SymmetricEigen::new(sym);
    let clamped = decomp.eigenvalues.map(|l| l.max(0.0));
    let rebuilt =
        decomp.eigenvectors * Matrix3::from_diagonal(&clamped) * decomp.eigenvectors.transpose();
    (rebuilt + rebuilt.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition,
/// with negative eigenvalues clamped to zero. Rejects inputs whose
/// asymmetry exceeds 1e-6.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, BeliefError> {
    if m.nrows() != m.ncols() {
        return Err(BeliefError::DimensionMismatch(m.nrows(), m.ncols()));
    }
    let asym = max_asymmetry_dyn(m);
    if asym > 1e-6 {
        return Err(BeliefError::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let decomp = nalgebra::SymmetricEigen::new(sym);
    let roots = decomp.eigenvalues.map(|l| l.max(0.0).sqrt());
    let s = &decomp.eigenvectors * DMatrix::from_diagonal(&roots) * decomp.eigenvectors.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// 3x3 fast path of [`sqrtm_spd`]; input must already be symmetric.
pub fn sqrtm_spd3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let decomp = nalgebra::SymmetricEigen::new(*m);
    let roots = decomp.eigenvalues.map(|l| l.max(0.0).sqrt());
    let s = decomp.eigenvectors * Matrix3::from_diagonal(&roots) * decomp.eigenvectors.transpose();
    (s + s.transpose()) * 0.5
}

/// Bures excess `tr(P) + tr(P2) - 2 tr[(P2^1/2 P P2^1/2)^1/2]`, clamped at
/// zero (rounding can drive it to -1e-15 for near-identical inputs).
fn bures_excess_dyn(p: &DMatrix<f64>, p2: &DMatrix<f64>) -> f64 {
    let s2 = sqrtm_spd(p2).expect("bures caller passes symmetric covariances");
    let inner = &s2 * p * &s2;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = inner
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    (p.trace() + p2.trace() - 2.0 * cross).max(0.0)
}

fn bures_excess3(p: &Matrix3<f64>, p2: &Matrix3<f64>) -> f64 {
    let s2 = sqrtm_spd3(p2);
    let inner = s2 * p * s2;
    let inner = (inner + inner.transpose()) * 0.5;
    let cross: f64 = inner
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    (p.trace() + p2.trace() - 2.0 * cross).max(0.0)
}

/// Closed-form 2-Wasserstein distance between Euclidean Gaussians:
/// `sqrt(||x - x'||^2 + bures(P, P'))`.
///
/// The Bures term is evaluated with its two arguments in a canonical order
/// (the trace of the matrix geometric cross term is order-independent), so
/// swapping the arguments returns the identical floating-point value.
pub fn w2_gaussian(a: &GaussianBelief, b: &GaussianBelief) -> Result<f64, BeliefError> {
    if a.dim() != b.dim() {
        return Err(BeliefError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_sq = (&a.mean - &b.mean).norm_squared();
    let (lo, hi) = order_pair_dyn(&a.cov, &b.cov);
    Ok((mean_sq + bures_excess_dyn(lo, hi)).sqrt())
}

fn order_pair_dyn<'a>(
    p: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
) -> (&'a DMatrix<f64>, &'a DMatrix<f64>) {
    let (tp, tq) = (p.trace(), q.trace());
    if tp < tq {
        return (p, q);
    }
    if tq < tp {
        return (q, p);
    }
    for (x, y) in p.iter().zip(q.iter()) {
        if x < y {
            return (p, q);
        }
        if y < x {
            return (q, p);
        }
    }
    (p, q)
}

/// Tangent-space approximation of W2 between two SE(2) beliefs, linearized
/// at `a.mean`: the relative mean enters through the log map and `b`'s
/// covariance is transported by the adjoint of the relative pose.
pub fn w2_lie_approx(a: &Se2Belief, b: &Se2Belief) -> f64 {
    if a == b {
        return 0.0;
    }
    let rel = a.mean.between(&b.mean);
    let ad = rel.adjoint();
    let transported = ad * b.cov * ad.transpose();
    let transported = (transported + transported.transpose()) * 0.5;
    let mean_sq = {
        let l = rel.log();
        l.norm() * l.norm()
    };
    (mean_sq + bures_excess3(&a.cov, &transported)).sqrt()
}

/// W2 between a Euclidean Gaussian and the Dirac measure at `g`:
/// `sqrt(||x - g||^2 + tr(P))`.
pub fn w2_to_dirac(b: &GaussianBelief, g: &DVector<f64>) -> f64 {
    ((&b.mean - g).norm_squared() + b.cov.trace()).sqrt()
}

/// SE(2) variant of [`w2_to_dirac`]: the mean term is the tangent-space
/// pose distance at the belief mean.
pub fn w2_to_dirac_se2(b: &Se2Belief, g: &Pose2) -> f64 {
    let d = tangent_distance(&b.mean, g);
    (d * d + b.cov.trace()).sqrt()
}

/// Ball or ellipsoid goal region around a Euclidean center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub center: DVector<f64>,
    pub radius: f64,
    /// SPD shape matrix E of the ellipsoid `(x-g)^T E^-1 (x-g) <= r^2`;
    /// `None` means the unit ball metric.
    pub shape: Option<DMatrix<f64>>,
}

impl GoalSpec {
    pub fn ball(center: DVector<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "goal radius must be positive");
        GoalSpec {
            center,
            radius,
            shape: None,
        }
    }

    pub fn ellipsoid(center: DVector<f64>, radius: f64, shape: DMatrix<f64>) -> Self {
        assert!(radius > 0.0, "goal radius must be positive");
        GoalSpec {
            center,
            radius,
            shape: Some(shape),
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let d = x - &self.center;
        let dist_sq = match &self.shape {
            None => d.norm_squared(),
            Some(e) => {
                let einv = e.clone().try_inverse().expect("shape matrix invertible");
                (d.transpose() * einv * &d)[(0, 0)]
            }
        };
        dist_sq <= self.radius * self.radius
    }
}

/// Markov-inequality lower bound on `P(X in B_r(g))` for `X ~ b`:
/// `1 - W2^2(b, dirac_g) / r^2`.
///
/// Returned unclamped: non-positive values mean the bound is vacuous, and
/// callers that use it as a cost never need the clamp.
pub fn goal_reach_lower_bound(b: &GaussianBelief, goal: &GoalSpec) -> f64 {
    assert!(
        goal.shape.is_none(),
        "ball-shaped goal required; use goal_reach_lower_bound_ellipsoid"
    );
    let w2 = w2_to_dirac(b, &goal.center);
    1.0 - (w2 * w2) / (goal.radius * goal.radius)
}

/// Ellipsoid version of the goal-reaching bound, with the E-weighted
/// squared distance `(x-g)^T E^-1 (x-g) + tr(E^-1 P)` in place of W2^2.
pub fn goal_reach_lower_bound_ellipsoid(
    b: &GaussianBelief,
    goal: &GoalSpec,
) -> Result<f64, BeliefError> {
    let e = match &goal.shape {
        None => return Ok(goal_reach_lower_bound(b, goal)),
        Some(e) => e,
    };
    if e.nrows() != b.dim() {
        return Err(BeliefError::DimensionMismatch(e.nrows(), b.dim()));
    }
    if max_asymmetry_dyn(e) > 1e-6 {
        return Err(BeliefError::NotSymmetric(max_asymmetry_dyn(e)));
    }
    let min_eig = e.symmetric_eigenvalues().min();
    if min_eig <= 0.0 {
        return Err(BeliefError::SingularShape);
    }
    let einv = e.clone().try_inverse().ok_or(BeliefError::SingularShape)?;
    let d = &b.mean - &goal.center;
    let weighted_mean_sq = (d.transpose() * &einv * &d)[(0, 0)];
    let weighted_trace = (&einv * &b.cov).trace();
    Ok(1.0 - (weighted_mean_sq + weighted_trace) / (goal.radius * goal.radius))
}

/// Goal region on SE(2): membership and bounds are evaluated in the tangent
/// space at the goal center, with optional per-dimension weights playing
/// the role of a diagonal shape matrix (meters and radians are mixed in the
/// tangent norm, so the weights let a scene rebalance them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGoal {
    pub center: Pose2,
    pub radius: f64,
    #[serde(default = "unit_weights")]
    pub weights: [f64; 3],
}

fn unit_weights() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl PoseGoal {
    pub fn ball(center: Pose2, radius: f64) -> Self {
        assert!(radius > 0.0, "goal radius must be positive");
        PoseGoal {
            center,
            radius,
            weights: unit_weights(),
        }
    }

    pub fn weighted_dist_sq(&self, x: &Pose2) -> f64 {
        let d = self.center.between(x).log().as_vector();
        (0..3).map(|i| d[i] * d[i] / self.weights[i]).sum()
    }

    pub fn contains(&self, x: &Pose2) -> bool {
        self.weighted_dist_sq(x) <= self.radius * self.radius
    }

    /// Markov lower bound on goal-reaching probability for an SE(2) belief,
    /// with the covariance trace weighted like the distance term.
    pub fn reach_lower_bound(&self, b: &Se2Belief) -> f64 {
        let weighted_trace: f64 = (0..3).map(|i| b.cov[(i, i)] / self.weights[i]).sum();
        1.0 - (self.weighted_dist_sq(&b.mean) + weighted_trace) / (self.radius * self.radius)
    }

    /// Unweighted W2 from the belief to the Dirac at the goal center; this
    /// is the terminal-cost quantity.
    pub fn w2_to_center(&self, b: &Se2Belief) -> f64 {
        w2_to_dirac_se2(b, &self.center)
    }
}

/// One standard-normal draw. Exposed because several modules (noisy
/// executors, Monte-Carlo harnesses, dataset generation) need scalar draws
/// without building a belief first.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Sample a tangent perturbation with covariance `cov` (3x3 PSD) given its
/// precomputed square root.
pub fn sample_tangent_with_sqrt<R: Rng + ?Sized>(
    sqrt_cov: &Matrix3<f64>,
    rng: &mut R,
) -> Vector3<f64> {
    let z = Vector3::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    );
    sqrt_cov * z
}
