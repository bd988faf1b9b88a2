//! Monte Carlo performance measures.

use std::io::Write;

use crate::error::{LbgmError, Result};
use crate::numeric::{fsum, mean};

fn nonzero(truth: f64) -> Result<()> {
    if truth == 0.0 {
        return Err(LbgmError::Metric("relative metric undefined for a zero true value".into()));
    }
    Ok(())
}

fn nonempty(estimates: &[f64]) -> Result<()> {
    if estimates.is_empty() {
        return Err(LbgmError::Metric("no estimates".into()));
    }
    Ok(())
}

/// `Σ(θ̂_s − θ) / S`.
pub fn bias(estimates: &[f64], truth: f64) -> Result<f64> {
    nonempty(estimates)?;
    Ok(fsum(estimates.iter().map(|e| e - truth)) / estimates.len() as f64)
}

/// `Σ(θ̂_s − θ) / (S·θ)`.
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    nonzero(truth)?;
    Ok(bias(estimates, truth)? / truth)
}

/// `√(Σ(θ̂_s − θ̄)² / (S − 1))`.
pub fn empirical_se(estimates: &[f64]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(LbgmError::Metric("empirical SE needs at least two estimates".into()));
    }
    let m = mean(estimates);
    Ok((fsum(estimates.iter().map(|e| (e - m).powi(2))) / (estimates.len() - 1) as f64).sqrt())
}

/// `√(Σ(θ̂_s − θ)² / S)`.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    nonempty(estimates)?;
    Ok((fsum(estimates.iter().map(|e| (e - truth).powi(2))) / estimates.len() as f64).sqrt())
}

/// `√(Σ(θ̂_s − θ)² / S) / θ`.
pub fn relative_rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    nonzero(truth)?;
    Ok(rmse(estimates, truth)? / truth)
}

/// Share of intervals containing `truth`; unavailable intervals count as misses.
pub fn coverage(intervals: &[Option<(f64, f64)>], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(LbgmError::Metric("no intervals".into()));
    }
    let hits = intervals
        .iter()
        .filter(|iv| matches!(iv, Some((lo, hi)) if *lo <= truth && truth <= *hi))
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMetrics {
    pub parameter: String,
    pub truth: f64,
    /// Relative bias, or plain bias when `absolute`.
    pub relative_bias: f64,
    pub empirical_se: f64,
    /// Relative RMSE, or plain RMSE when `absolute`.
    pub relative_rmse: f64,
    pub coverage: f64,
    /// Set when the true value is 0 and the absolute variants are reported.
    pub absolute: bool,
}

impl ParameterMetrics {
    pub fn compute(parameter: &str, truth: f64, estimates: &[f64], intervals: &[Option<(f64, f64)>]) -> Result<Self> {
        let absolute = truth == 0.0;
        let (b, r) = if absolute {
            (bias(estimates, truth)?, rmse(estimates, truth)?)
        } else {
            (relative_bias(estimates, truth)?, relative_rmse(estimates, truth)?)
        };
        Ok(Self {
            parameter: parameter.into(),
            truth,
            relative_bias: b,
            empirical_se: empirical_se(estimates).unwrap_or(f64::NAN),
            relative_rmse: r,
            coverage: coverage(intervals, truth)?,
            absolute,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub parameters: Vec<ParameterMetrics>,
    /// Replications with a converged fit among those attempted.
    pub convergence_rate: f64,
    pub attempted: usize,
    pub converged: usize,
    /// Restarts from jittered starting values summed over counted replications.
    pub fit_retries: usize,
    /// Set when the attempt cap stopped the study before enough converged fits.
    pub cap_reached: bool,
}

impl MetricReport {
    pub fn get(&self, parameter: &str) -> Option<&ParameterMetrics> {
        self.parameters.iter().find(|p| p.parameter == parameter)
    }

    /// `parameter,truth,relative_bias,empirical_se,relative_rmse,coverage`; rows
    /// holding absolute variants carry an `(abs)` suffix on the parameter name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["parameter", "truth", "relative_bias", "empirical_se", "relative_rmse", "coverage"])?;
        for p in &self.parameters {
            let name = if p.absolute {
                format!("{}(abs)", p.parameter)
            } else {
                p.parameter.clone()
            };
            wtr.write_record([
                name,
                p.truth.to_string(),
                p.relative_bias.to_string(),
                p.empirical_se.to_string(),
                p.relative_rmse.to_string(),
                p.coverage.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
        Ok(())
    }
}
