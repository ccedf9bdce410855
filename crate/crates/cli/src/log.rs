//! Run logging: the learning-curve CSV with its fixed column schema and
//! the kappa trace. Values are printed with Rust's shortest round-trip
//! float formatting, so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::HarnessError;

pub const LEARNING_CURVE_COLUMNS: &str = "epoch,env_steps,eval_return_mean,eval_return_std,kappa,base_uncertainty,mean_rollout_length,stored_transitions,sac_updates,model_holdout_nll,temperature";

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub env_steps: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub kappa: f64,
    pub base_uncertainty: f64,
    pub mean_rollout_length: f64,
    pub stored_transitions: usize,
    pub sac_updates: usize,
    pub model_holdout_nll: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LearningCurve {
    pub rows: Vec<EpochRow>,
}

impl LearningCurve {
    pub fn push(&mut self, row: EpochRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LEARNING_CURVE_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.env_steps,
                r.eval_return_mean,
                r.eval_return_std,
                r.kappa,
                r.base_uncertainty,
                r.mean_rollout_length,
                r.stored_transitions,
                r.sac_updates,
                r.model_holdout_nll,
                r.temperature
            )
            .expect("write to string");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One kappa update per rollout round.
#[derive(Debug, Clone, Default)]
pub struct KappaTrace {
    pub rows: Vec<(u64, usize, f64, f64)>,
}

impl KappaTrace {
    pub fn push(&mut self, round: u64, env_steps: usize, base_uncertainty: f64, kappa: f64) {
        self.rows.push((round, env_steps, base_uncertainty, kappa));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,env_steps,base_uncertainty,kappa\n");
        for (round, steps, u, k) in &self.rows {
            writeln!(out, "{round},{steps},{u},{k}").expect("write to string");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Parses a learning-curve CSV back into rows (used by export and tests).
pub fn parse_learning_curve(text: &str) -> Result<Vec<EpochRow>, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::MissingRun("empty learning-curve CSV".into()))?;
    if header != LEARNING_CURVE_COLUMNS {
        return Err(HarnessError::MissingRun(format!(
            "unexpected learning-curve header: {header}"
        )));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(HarnessError::MissingRun(format!(
                "row {} has {} fields",
                n + 1,
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64, HarnessError> {
            fields[i]
                .parse()
                .map_err(|e| HarnessError::MissingRun(format!("row {}: {e}", n + 1)))
        };
        let u = |i: usize| -> Result<usize, HarnessError> {
            fields[i]
                .parse()
                .map_err(|e| HarnessError::MissingRun(format!("row {}: {e}", n + 1)))
        };
        rows.push(EpochRow {
            epoch: u(0)?,
            env_steps: u(1)?,
            eval_return_mean: f(2)?,
            eval_return_std: f(3)?,
            kappa: f(4)?,
            base_uncertainty: f(5)?,
            mean_rollout_length: f(6)?,
            stored_transitions: u(7)?,
            sac_updates: u(8)?,
            model_holdout_nll: f(9)?,
            temperature: f(10)?,
        });
    }
    Ok(rows)
}
