//! One benchmark run's results, and the line-oriented CSV they travel in.

use crate::BenchError;

/// Everything measured about one (problem, method, repeat) run.
///
/// Costs are the unified Wasserstein measure from [`crate::unify_cost`]
/// (infinite when unsolved); `success_rate`/`collision_rate` come from
/// Monte-Carlo execution through the ground-truth noisy dynamics;
/// `preferred` says whether the plan's endpoint lies in the scene's
/// preferred goal region; `bound` is the goal-probability lower bound at
/// the re-propagated terminal belief (negative values are vacuous).
/// `mc_rollouts` is kept so the bound audit can reconstruct the Monte-Carlo
/// standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub problem: u64,
    pub method: String,
    pub seed: u64,
    pub solved: bool,
    pub running_cost: f64,
    pub terminal_cost: f64,
    pub total_cost: f64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub preferred: bool,
    pub bound: f64,
    pub mc_rollouts: u64,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Rates must be probabilities and the method name must survive the
    /// comma-separated format.
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(0.0..=1.0).contains(&self.success_rate) || !(0.0..=1.0).contains(&self.collision_rate) {
            return Err(BenchError::BadCsv(format!(
                "rates out of [0,1] in record for problem {} method {}",
                self.problem, self.method
            )));
        }
        if self.method.is_empty() || self.method.contains(',') {
            return Err(BenchError::BadCsv(format!(
                "method name {:?} is empty or contains a comma",
                self.method
            )));
        }
        Ok(())
    }
}

pub const RECORD_CSV_HEADER: &str = "problem,method,seed,solved,running_cost,terminal_cost,\
total_cost,success_rate,collision_rate,preferred,bound,mc_rollouts,wall_time_s";

/// Serialize records to CSV, one row per record, in the given order.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.problem,
            r.method,
            r.seed,
            r.solved,
            r.running_cost,
            r.terminal_cost,
            r.total_cost,
            r.success_rate,
            r.collision_rate,
            r.preferred,
            r.bound,
            r.mc_rollouts,
            r.wall_time_s,
        ));
    }
    out
}

/// Parse records CSV produced by [`records_to_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>, BenchError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORD_CSV_HEADER => {}
        other => {
            return Err(BenchError::BadCsv(format!(
                "unexpected header {:?}",
                other.unwrap_or_default()
            )))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(BenchError::BadCsv(format!(
                "row {} has {} fields, expected 13",
                idx + 2,
                fields.len()
            )));
        }
        let err = |what: &str| BenchError::BadCsv(format!("row {}: bad {what}", idx + 2));
        let record = RunRecord {
            problem: fields[0].parse().map_err(|_| err("problem"))?,
            method: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| err("seed"))?,
            solved: fields[3].parse().map_err(|_| err("solved"))?,
            running_cost: fields[4].parse().map_err(|_| err("running_cost"))?,
            terminal_cost: fields[5].parse().map_err(|_| err("terminal_cost"))?,
            total_cost: fields[6].parse().map_err(|_| err("total_cost"))?,
            success_rate: fields[7].parse().map_err(|_| err("success_rate"))?,
            collision_rate: fields[8].parse().map_err(|_| err("collision_rate"))?,
            preferred: fields[9].parse().map_err(|_| err("preferred"))?,
            bound: fields[10].parse().map_err(|_| err("bound"))?,
            mc_rollouts: fields[11].parse().map_err(|_| err("mc_rollouts"))?,
            wall_time_s: fields[12].parse().map_err(|_| err("wall_time_s"))?,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
