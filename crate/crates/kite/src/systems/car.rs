//! Kinematic bicycle car: RK4 propagation of the nonholonomic unicycle-with-
//! steering ODE, finite-difference linearization for covariance propagation,
//! a control-dependent diagonal process-noise model with a non-negative
//! least-squares fitter, and a noisy executor standing in for a physics
//! simulator.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SystemError;
use crate::belief::sample_tangent_with_sqrt;
use crate::geometry::{wrap_angle, Pose2};

/// Nominal integration substep in seconds; actual substeps divide the
/// segment duration evenly: dt = tau / ceil(tau / CAR_SUBSTEP).
pub const CAR_SUBSTEP: f64 = 0.05;
/// Central-difference step for the endpoint-map Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarControl {
    /// Commanded longitudinal velocity, m/s.
    pub v: f64,
    /// Steering angle, rad; |phi| must stay below pi/2.
    pub phi: f64,
}

impl CarControl {
    pub fn new(v: f64, phi: f64) -> Self {
        CarControl { v, phi }
    }

    /// Turn rate at unit speed, 1/m.
    pub fn curvature(&self, wheelbase: f64) -> f64 {
        self.phi.tan() / wheelbase
    }
}

fn check_steering(u: &CarControl) -> Result<(), SystemError> {
    if u.phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(SystemError::SteeringOutOfRange(u.phi));
    }
    Ok(())
}

fn derivative_raw(s: &Vector3<f64>, u: &CarControl, wheelbase: f64) -> Vector3<f64> {
    Vector3::new(
        u.v * s.z.cos(),
        u.v * s.z.sin(),
        u.v / wheelbase * u.phi.tan(),
    )
}

/// Body-frame kinematics: planar velocity from heading, yaw rate from the
/// steering geometry.
pub fn bicycle_derivative(
    x: &Pose2,
    u: &CarControl,
    wheelbase: f64,
) -> Result<Vector3<f64>, SystemError> {
    check_steering(u)?;
    Ok(derivative_raw(&Vector3::new(x.x, x.y, x.theta), u, wheelbase))
}

/// Number of even substeps for a segment of duration `tau`.
pub fn substep_count(tau: f64) -> usize {
    ((tau / CAR_SUBSTEP).ceil() as usize).max(1)
}

fn rk4_step(s: &Vector3<f64>, u: &CarControl, h: f64, wheelbase: f64) -> Vector3<f64> {
    let k1 = derivative_raw(s, u, wheelbase);
    let k2 = derivative_raw(&(s + k1 * (h / 2.0)), u, wheelbase);
    let k3 = derivative_raw(&(s + k2 * (h / 2.0)), u, wheelbase);
    let k4 = derivative_raw(&(s + k3 * h), u, wheelbase);
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn rk4_raw(start: Vector3<f64>, u: &CarControl, h: f64, n: usize, wheelbase: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut s = start;
    for _ in 0..n {
        s = rk4_step(&s, u, h, wheelbase);
        out.push(s);
    }
    out
}

/// Fixed-step RK4 trajectory at `dt` resolution, endpoint included. The
/// heading is left unwrapped between substeps and normalized on output.
pub fn rk4_propagate(
    x: &Pose2,
    u: &CarControl,
    tau: f64,
    dt: f64,
    wheelbase: f64,
) -> Result<Vec<Pose2>, SystemError> {
    check_steering(u)?;
    if tau <= 0.0 {
        return Err(SystemError::NonPositiveDuration(tau));
    }
    if dt <= 0.0 {
        return Err(SystemError::NonPositiveDuration(dt));
    }
    let n = ((tau / dt).round() as usize).max(1);
    let h = tau / n as f64;
    let raw = rk4_raw(Vector3::new(x.x, x.y, x.theta), u, h, n, wheelbase);
    Ok(raw.iter().map(|s| Pose2::new(s.x, s.y, s.z)).collect())
}

/// Endpoint of the default-substep propagation.
pub fn rk4_endpoint(
    x: &Pose2,
    u: &CarControl,
    tau: f64,
    wheelbase: f64,
) -> Result<Pose2, SystemError> {
    let n = substep_count(tau);
    Ok(*rk4_propagate(x, u, tau, tau / n as f64, wheelbase)?.last().unwrap())
}

/// Jacobian of the RK4 endpoint map with respect to the start state, by
/// central finite differences on the unwrapped coordinates.
pub fn linearize_bicycle(x: &Pose2, u: &CarControl, tau: f64, wheelbase: f64) -> Matrix3<f64> {
    let n = substep_count(tau);
    let h = tau / n as f64;
    let base = Vector3::new(x.x, x.y, x.theta);
    let mut a = Matrix3::zeros();
    for dim in 0..3 {
        let mut hi = base;
        let mut lo = base;
        hi[dim] += JACOBIAN_STEP;
        lo[dim] -= JACOBIAN_STEP;
        let fhi = *rk4_raw(hi, u, h, n, wheelbase).last().unwrap();
        let flo = *rk4_raw(lo, u, h, n, wheelbase).last().unwrap();
        let col = (fhi - flo) / (2.0 * JACOBIAN_STEP);
        a.set_column(dim, &col);
    }
    a
}

/// Control-dependent diagonal process noise for one segment:
/// |u_v| tau Diag(alpha) + |u_v tan(u_phi)| tau Diag(beta).
pub fn car_process_q(
    u: &CarControl,
    tau: f64,
    alpha: &[f64; 3],
    beta: &[f64; 3],
) -> Matrix3<f64> {
    let f1 = u.v.abs() * tau;
    let f2 = (u.v * u.phi.tan()).abs() * tau;
    Matrix3::from_diagonal(&Vector3::new(
        f1 * alpha[0] + f2 * beta[0],
        f1 * alpha[1] + f2 * beta[1],
        f1 * alpha[2] + f2 * beta[2],
    ))
}

/// One logged transition used for noise fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub start: Pose2,
    pub control: CarControl,
    pub duration: f64,
    pub observed: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCoeffs {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
}

/// Non-negative least squares on two features: returns the coefficient
/// pair minimizing ||c1 f1 + c2 f2 - s|| with c >= 0 (active-set over the
/// three sign patterns).
fn nnls2(f1: &[f64], f2: &[f64], s: &[f64]) -> (f64, f64) {
    let g11: f64 = f1.iter().map(|v| v * v).sum();
    let g22: f64 = f2.iter().map(|v| v * v).sum();
    let g12: f64 = f1.iter().zip(f2).map(|(a, b)| a * b).sum();
    let h1: f64 = f1.iter().zip(s).map(|(a, b)| a * b).sum();
    let h2: f64 = f2.iter().zip(s).map(|(a, b)| a * b).sum();
    let det = g11 * g22 - g12 * g12;
    if det.abs() > 1e-12 {
        let c1 = (g22 * h1 - g12 * h2) / det;
        let c2 = (g11 * h2 - g12 * h1) / det;
        if c1 >= 0.0 && c2 >= 0.0 {
            return (c1, c2);
        }
    }
    // Constrained candidates on the axes.
    let cand1 = if g11 > 0.0 { (h1 / g11).max(0.0) } else { 0.0 };
    let cand2 = if g22 > 0.0 { (h2 / g22).max(0.0) } else { 0.0 };
    let res = |c1: f64, c2: f64| -> f64 {
        c1 * c1 * g11 + c2 * c2 * g22 + 2.0 * c1 * c2 * g12 - 2.0 * (c1 * h1 + c2 * h2)
    };
    if res(cand1, 0.0) <= res(0.0, cand2) {
        (cand1, 0.0)
    } else {
        (0.0, cand2)
    }
}

/// Fits the process-noise coefficients by regressing per-dimension squared
/// residuals (observed vs deterministic endpoint) onto the two noise
/// features, with non-negativity enforced.
pub fn fit_process_noise(samples: &[SegmentSample], wheelbase: f64) -> NoiseCoeffs {
    let mut f1 = Vec::with_capacity(samples.len());
    let mut f2 = Vec::with_capacity(samples.len());
    let mut sq = [Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        let pred = rk4_endpoint(&s.start, &s.control, s.duration, wheelbase)
            .expect("logged segment must be integrable");
        f1.push(s.control.v.abs() * s.duration);
        f2.push((s.control.v * s.control.phi.tan()).abs() * s.duration);
        let r = [
            s.observed.x - pred.x,
            s.observed.y - pred.y,
            wrap_angle(s.observed.theta - pred.theta),
        ];
        for dim in 0..3 {
            sq[dim].push(r[dim] * r[dim]);
        }
    }
    let mut alpha = [0.0; 3];
    let mut beta = [0.0; 3];
    for dim in 0..3 {
        let (a, b) = nnls2(&f1, &f2, &sq[dim]);
        alpha[dim] = a;
        beta[dim] = b;
    }
    NoiseCoeffs { alpha, beta }
}

/// Ground-truth stochastic car used for data generation and Monte-Carlo
/// plan execution: deterministic RK4 flow plus one Gaussian perturbation
/// per segment with covariance matching the fitted noise model's form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarExecutor {
    pub wheelbase: f64,
    pub coeffs: NoiseCoeffs,
}

impl CarExecutor {
    /// Substep waypoints of one noisy segment; the process noise is applied
    /// at the endpoint in global coordinates (the same per-segment
    /// granularity the covariance propagation models).
    pub fn execute_segment<R: Rng + ?Sized>(
        &self,
        x: &Pose2,
        u: &CarControl,
        tau: f64,
        rng: &mut R,
    ) -> Result<Vec<Pose2>, SystemError> {
        let n = substep_count(tau);
        let mut traj = rk4_propagate(x, u, tau, tau / n as f64, self.wheelbase)?;
        let q = car_process_q(u, tau, &self.coeffs.alpha, &self.coeffs.beta);
        let sq = Matrix3::from_diagonal(&q.diagonal().map(f64::sqrt));
        let noise = sample_tangent_with_sqrt(&sq, rng);
        let end = traj.last().unwrap();
        *traj.last_mut().unwrap() = Pose2::new(
            end.x + noise.x,
            end.y + noise.y,
            end.theta + noise.z,
        );
        Ok(traj)
    }
}
