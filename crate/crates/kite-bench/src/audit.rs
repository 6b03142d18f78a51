//! Goal-probability bound audit: every recorded lower bound must be
//! consistent with its Monte-Carlo success estimate up to sampling noise.

use crate::record::RunRecord;

/// One record whose bound exceeded the empirical success rate by more than
/// three Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub problem: u64,
    pub method: String,
    pub seed: u64,
    pub bound: f64,
    pub success_rate: f64,
    /// The tolerance that was exceeded: 3 * sqrt(p (1 - p) / n).
    pub tolerance: f64,
}

impl std::fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "problem {} method {} seed {}: bound {:.6} > success {:.6} + {:.6}",
            self.problem, self.method, self.seed, self.bound, self.success_rate, self.tolerance
        )
    }
}

/// Flag every record whose non-vacuous bound (>= 0) exceeds the empirical
/// success rate by more than three MC standard errors.  An empty report is
/// the pass condition.
pub fn verify_bound(records: &[RunRecord]) -> Vec<BoundViolation> {
    let mut report = Vec::new();
    for r in records {
        if r.bound < 0.0 {
            continue;
        }
        let n = r.mc_rollouts.max(1) as f64;
        let tolerance = 3.0 * (r.success_rate * (1.0 - r.success_rate) / n).sqrt();
        if r.bound > r.success_rate + tolerance {
            report.push(BoundViolation {
                problem: r.problem,
                method: r.method.clone(),
                seed: r.seed,
                bound: r.bound,
                success_rate: r.success_rate,
                tolerance,
            });
        }
    }
    report
}
