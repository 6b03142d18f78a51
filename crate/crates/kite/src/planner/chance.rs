//! Chance-constrained collision checking for planar Gaussian beliefs.
//!
//! Each obstacle is handled through the halfspace tangent to its inflated
//! boundary at the point closest to the belief mean: the Gaussian mass on the
//! free side of that halfspace lower-bounds the probability of being outside
//! the obstacle, so requiring that mass to reach `p_free` is conservative.

use crate::systems::{Obstacle, Scene};
use nalgebra::{Matrix2, Vector2};

/// Error function, maximum absolute error about 1.5e-7.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Standard normal cumulative distribution function.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9 over (0, 1)).
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Probability mass of N(0, var) on the side `margin` away from the boundary:
/// valid when the mass on the free side reaches `p_free`.  A degenerate
/// variance reduces to the deterministic sign test.
fn halfspace_ok(margin: f64, var: f64, p_free: f64) -> bool {
    if var <= 1e-30 {
        margin > 0.0
    } else {
        gaussian_cdf(margin / var.sqrt()) >= p_free
    }
}

/// Conservative collision check for a planar Gaussian position marginal
/// against every obstacle and world wall of `scene`, each inflated by the
/// robot radius.  Returns `true` when every per-constraint free-side mass
/// reaches `p_free`.
pub fn position_chance_valid(
    scene: &Scene,
    mean_x: f64,
    mean_y: f64,
    pos_cov: &Matrix2<f64>,
    p_free: f64,
) -> bool {
    let r_inflate = scene.robot_radius;
    let mean = Vector2::new(mean_x, mean_y);

    // World walls: four axis-aligned halfspaces inset by the robot radius.
    let w = &scene.world;
    let axis_checks = [
        (mean_x - (w.x_min + r_inflate), pos_cov[(0, 0)]),
        ((w.x_max - r_inflate) - mean_x, pos_cov[(0, 0)]),
        (mean_y - (w.y_min + r_inflate), pos_cov[(1, 1)]),
        ((w.y_max - r_inflate) - mean_y, pos_cov[(1, 1)]),
    ];
    for (margin, var) in axis_checks {
        if !halfspace_ok(margin, var, p_free) {
            return false;
        }
    }

    for obs in &scene.obstacles {
        match obs {
            Obstacle::Circle { cx, cy, radius } => {
                let d = mean - Vector2::new(*cx, *cy);
                let dist = d.norm();
                if dist < 1e-12 {
                    return false;
                }
                let n = d / dist;
                let margin = dist - (radius + r_inflate);
                let var = (n.transpose() * pos_cov * n)[(0, 0)].max(0.0);
                if !halfspace_ok(margin, var, p_free) {
                    return false;
                }
            }
            Obstacle::Rect { x, y, w: rw, h: rh } => {
                // Inflating each face by the robot radius over-covers the
                // true swept shape at the corners, which errs conservative.
                let (x0, x1) = (x - r_inflate, x + rw + r_inflate);
                let (y0, y1) = (y - r_inflate, y + rh + r_inflate);
                let inside_x = mean_x > x0 && mean_x < x1;
                let inside_y = mean_y > y0 && mean_y < y1;
                if inside_x && inside_y {
                    return false;
                }
                // Nearest-face halfspace: normal is axis-aligned toward the
                // mean.  Positive margin = distance outside the inflated face.
                let mx = (x0 - mean_x).max(mean_x - x1);
                let my = (y0 - mean_y).max(mean_y - y1);
                let (margin, var) = if inside_x {
                    (my, pos_cov[(1, 1)])
                } else if inside_y {
                    (mx, pos_cov[(0, 0)])
                } else {
                    // Diagonal region: either face halfspace separates; take
                    // the more permissive one (larger margin in std units).
                    let zx = mx / pos_cov[(0, 0)].max(1e-30).sqrt();
                    let zy = my / pos_cov[(1, 1)].max(1e-30).sqrt();
                    if zx >= zy {
                        (mx, pos_cov[(0, 0)])
                    } else {
                        (my, pos_cov[(1, 1)])
                    }
                };
                if !halfspace_ok(margin, var, p_free) {
                    return false;
                }
            }
        }
    }
    true
}
