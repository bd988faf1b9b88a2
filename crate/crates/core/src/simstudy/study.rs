//! Replicated generate-and-fit runs with performance summaries.
//!
//! Attempt `a` draws its data from a ChaCha stream selected by `a` under the
//! master seed, so the set of results does not depend on how attempts are
//! scheduled. Attempts run in batches; the first `S` converged attempts in index
//! order are kept and anything after the `S`-th is discarded.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::design::SimulationDesign;
use super::generate::{generate_dataset, GeneratedData};
use super::metrics::{MetricReport, ParameterMetrics};
use crate::error::{LbgmError, Result};
use crate::estimator::{fit, FitOptions, FitStatus};
use crate::model::ModelSpec;
use crate::numeric::normal_quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFit {
    /// Free parameters in the design layout's order.
    pub estimates: Vec<f64>,
    pub se: Vec<Option<f64>>,
    pub status: FitStatus,
    /// Optimizer runs used, including the first.
    pub fit_attempts: usize,
    pub deviance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub index: usize,
    pub fit: std::result::Result<ReplicationFit, String>,
}

impl Attempt {
    pub fn converged(&self) -> bool {
        matches!(&self.fit, Ok(f) if f.status == FitStatus::Converged)
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub parallel: bool,
    /// Attempts stop at `cap_factor · reps`.
    pub cap_factor: usize,
}

impl StudyOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            fit: FitOptions::default(),
            parallel: true,
            cap_factor: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    /// Every attempt up to the last one counted, in index order.
    pub attempts: Vec<Attempt>,
    pub report: MetricReport,
}

impl StudyResult {
    pub fn converged(&self) -> impl Iterator<Item = &ReplicationFit> {
        self.attempts
            .iter()
            .filter(|a| a.converged())
            .filter_map(|a| a.fit.as_ref().ok())
    }

    /// Estimates of one parameter over the converged replications.
    pub fn estimates_of(&self, parameter: usize) -> Vec<f64> {
        self.converged().map(|f| f.estimates[parameter]).collect()
    }

    /// One row per attempt: `attempt,status,used,fit_attempts,deviance` followed by
    /// an estimate and an SE column per parameter.
    pub fn write_replications_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["attempt", "status", "used", "fit_attempts", "deviance"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for n in &self.names {
            header.push(n.clone());
            header.push(format!("{n}_se"));
        }
        wtr.write_record(&header)?;
        let na = || "NA".to_string();
        for a in &self.attempts {
            let mut row = vec![a.index.to_string()];
            match &a.fit {
                Ok(f) => {
                    row.push(f.status.as_str().into());
                    row.push(a.converged().to_string());
                    row.push(f.fit_attempts.to_string());
                    row.push(f.deviance.to_string());
                    for (e, s) in f.estimates.iter().zip(&f.se) {
                        row.push(e.to_string());
                        row.push(s.map(|v| v.to_string()).unwrap_or_else(na));
                    }
                }
                Err(_) => {
                    row.extend(["Error".to_string(), "false".into(), na(), na()]);
                    row.extend(std::iter::repeat_with(na).take(2 * self.names.len()));
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Fit the design's model to generated data with [`fit`].
pub fn fit_replication(
    data: &GeneratedData,
    spec: &ModelSpec,
    names: &[String],
    options: &FitOptions,
) -> Result<ReplicationFit> {
    let res = fit(&data.sample, spec, options)?;
    if res.names() != names {
        return Err(LbgmError::Design(
            "a replication's observed waves differ from the design".into(),
        ));
    }
    Ok(ReplicationFit {
        estimates: res.estimate_vector.iter().copied().collect(),
        se: res.se.clone(),
        status: res.status,
        fit_attempts: res.attempts,
        deviance: res.deviance,
    })
}

/// Run the study with the FIML estimator.
pub fn run_study(design: &SimulationDesign, options: &StudyOptions) -> Result<StudyResult> {
    let names = design.layout()?.names;
    let fit_options = options.fit.clone();
    run_study_with(design, options, |data, spec, seed| {
        let opts = FitOptions {
            rng_seed: seed,
            ..fit_options.clone()
        };
        fit_replication(data, spec, &names, &opts)
    })
}

/// Run the study with a caller-supplied estimator receiving the generated data,
/// the design's model and a seed for the estimator's own randomness.
pub fn run_study_with<E>(design: &SimulationDesign, options: &StudyOptions, estimator: E) -> Result<StudyResult>
where
    E: Fn(&GeneratedData, &ModelSpec, u64) -> Result<ReplicationFit> + Sync,
{
    design.check()?;
    if options.reps == 0 {
        return Err(LbgmError::Design("the replication count must be positive".into()));
    }
    let spec = design.model_spec();
    let layout = design.layout()?;
    let truth = layout.vector(&design.truth(&layout.rates));

    let run_one = |index: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(index as u64);
        let fit = generate_dataset(design, &mut rng).and_then(|data| {
            let fit_seed = rng.next_u64();
            estimator(&data, &spec, fit_seed)
        });
        Attempt {
            index,
            fit: fit.map_err(|e| e.to_string()),
        }
    };

    let cap = options.cap_factor.max(1) * options.reps;
    let mut attempts = Vec::new();
    let mut converged = 0;
    let mut next = 0;
    while converged < options.reps && next < cap {
        let need = options.reps - converged;
        let batch = (need + need / 10 + 1).min(cap - next);
        let results: Vec<Attempt> = if options.parallel {
            (next..next + batch).into_par_iter().map(run_one).collect()
        } else {
            (next..next + batch).map(run_one).collect()
        };
        for a in results {
            if converged == options.reps {
                break;
            }
            if a.converged() {
                converged += 1;
            }
            attempts.push(a);
        }
        next += batch;
    }

    let used: Vec<&ReplicationFit> = attempts
        .iter()
        .filter(|a| a.converged())
        .filter_map(|a| a.fit.as_ref().ok())
        .collect();
    let z = normal_quantile(0.975);
    let parameters = if used.is_empty() {
        Vec::new()
    } else {
        layout
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let est: Vec<f64> = used.iter().map(|f| f.estimates[i]).collect();
                let ci: Vec<Option<(f64, f64)>> = used
                    .iter()
                    .map(|f| f.se[i].map(|s| (f.estimates[i] - z * s, f.estimates[i] + z * s)))
                    .collect();
                ParameterMetrics::compute(name, truth[i], &est, &ci)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let report = MetricReport {
        parameters,
        convergence_rate: converged as f64 / attempts.len() as f64,
        attempted: attempts.len(),
        converged,
        fit_retries: used.iter().map(|f| f.fit_attempts - 1).sum(),
        cap_reached: converged < options.reps,
    };
    Ok(StudyResult {
        names: layout.names,
        truth: truth.iter().copied().collect(),
        attempts,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_design() -> SimulationDesign {
        let mut d = SimulationDesign::ten_wave_decreasing();
        d.n = 20;
        d
    }

    fn oracle(design: &SimulationDesign) -> impl Fn(&GeneratedData, &ModelSpec, u64) -> Result<ReplicationFit> + Sync {
        let layout = design.layout().unwrap();
        let truth: Vec<f64> = layout.vector(&design.truth(&layout.rates)).iter().copied().collect();
        move |_, _, _| {
            Ok(ReplicationFit {
                se: vec![Some(0.1); truth.len()],
                estimates: truth.clone(),
                status: FitStatus::Converged,
                fit_attempts: 1,
                deviance: 0.0,
            })
        }
    }

    #[test]
    fn perfect_estimator_has_zero_error() {
        let d = small_design();
        let res = run_study_with(&d, &StudyOptions::new(5, 1), oracle(&d)).unwrap();
        assert_eq!(res.report.converged, 5);
        assert_eq!(res.report.convergence_rate, 1.0);
        for p in &res.report.parameters {
            assert_eq!(p.relative_bias, 0.0);
            assert_eq!(p.relative_rmse, 0.0);
            assert_eq!(p.empirical_se, 0.0);
            assert_eq!(p.coverage, 1.0);
        }
    }

    #[test]
    fn failing_estimator_hits_cap() {
        let d = small_design();
        let res = run_study_with(&d, &StudyOptions::new(4, 1), |_, _, _| {
            Err(LbgmError::RetriesExhausted { attempts: 1 })
        })
        .unwrap();
        assert!(res.report.cap_reached);
        assert_eq!(res.report.attempted, 12);
        assert_eq!(res.report.convergence_rate, 0.0);
        assert!(res.report.parameters.is_empty());
    }

    #[test]
    fn keeps_first_converged_attempts_in_order() {
        let d = small_design();
        let inner = oracle(&d);
        // every attempt whose fit seed is even fails
        let est = move |g: &GeneratedData, s: &ModelSpec, seed: u64| {
            let mut f = inner(g, s, seed)?;
            if seed % 2 == 0 {
                f.status = FitStatus::RetriesExhausted;
            }
            Ok(f)
        };
        let mut opts = StudyOptions::new(6, 9);
        let a = run_study_with(&d, &opts, &est).unwrap();
        opts.parallel = false;
        let b = run_study_with(&d, &opts, &est).unwrap();
        assert_eq!(a.attempts, b.attempts);
        assert_eq!(a.report, b.report);
        assert!(a.attempts.last().unwrap().converged());
        assert_eq!(a.attempts.iter().filter(|x| x.converged()).count(), 6);
    }
}
