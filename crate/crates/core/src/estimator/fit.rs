use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::deviance::Objective;
use super::layout::ParamLayout;
use super::numdiff::{hessian_from_gradient, natural_gradient};
use super::optim::{minimize, BfgsOutcome, BfgsSettings};
use super::start::starting_values_with;
use super::transform::Transform;
use crate::data::{validate, LongitudinalSample};
use crate::error::{LbgmError, Result};
use crate::model::{is_psd, ModelSpec, ParameterSet};
use crate::numeric::{min_correlation_eigenvalue, normal_quantile, two_sided_p};

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Restarts from jittered starting values after a failed run.
    pub max_retries: usize,
    /// Relative deviance change between iterations.
    pub deviance_tol: f64,
    /// Scaled gradient bound in the search coordinates.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Relative size of the multiplicative perturbation applied on restart.
    pub jitter_scale: f64,
    pub rng_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_retries: 10,
            deviance_tol: 1e-9,
            gradient_tol: 1e-4,
            max_iterations: 2000,
            jitter_scale: 0.2,
            rng_seed: 0,
        }
    }
}

impl FitOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.deviance_tol > 0.0 && self.gradient_tol > 0.0 && self.jitter_scale >= 0.0) {
            return Err(LbgmError::Spec("fit tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    RetriesExhausted,
    /// Converged with a covariance block numerically singular.
    BoundaryPSD,
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Converged => "Converged",
            FitStatus::RetriesExhausted => "RetriesExhausted",
            FitStatus::BoundaryPSD => "BoundaryPSD",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub estimates: ParameterSet,
    /// Free parameters in `layout` order.
    pub estimate_vector: DVector<f64>,
    pub se: Vec<Option<f64>>,
    /// `2 H⁻¹` for the natural-parameter Hessian `H` of the deviance.
    pub vcov: Option<DMatrix<f64>>,
    pub deviance: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub attempts: usize,
    pub n_used: usize,
    /// Deviance at every accepted iterate of the successful run.
    pub trace: Vec<f64>,
    /// Largest absolute natural-parameter gradient entry at the estimate.
    pub max_gradient: f64,
    /// Mean observed time per wave for each outcome in spec order.
    pub reference_times: Vec<Vec<Option<f64>>>,
}

impl FitResult {
    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.layout.index_by_name(name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimate_vector[i])
    }

    pub fn is_converged(&self) -> bool {
        self.status != FitStatus::RetriesExhausted
    }
}

/// Singularity threshold on the smallest eigenvalue of a correlation matrix.
const BOUNDARY_EIGEN_TOL: f64 = 1e-6;
const POLISH_STEPS: usize = 6;

fn jitter(x: &DVector<f64>, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    x.map(|v| {
        let u: f64 = rng.random_range(-1.0..1.0);
        let w: f64 = rng.random_range(-1.0..1.0);
        v * (1.0 + scale * u) + 0.1 * scale * w
    })
}

fn valid_point(p: &ParameterSet) -> bool {
    p.outcomes.iter().all(|o| o.theta_eps > 0.0) && is_psd(&p.growth_cov()) && is_psd(&p.residual_cov())
}

/// Newton refinement in natural coordinates using a finite-difference Hessian of
/// the analytic gradient. Only steps that do not increase the deviance are taken.
fn polish(
    objective: &Objective,
    layout: &ParamLayout,
    template: &ParameterSet,
    mut theta: DVector<f64>,
    mut f: f64,
    trace: &mut Vec<f64>,
) -> (DVector<f64>, f64) {
    let grad = natural_gradient(objective, layout, template);
    let Ok(h) = hessian_from_gradient(&grad, &theta) else {
        return (theta, f);
    };
    let Some(chol) = h.cholesky() else {
        return (theta, f);
    };
    for _ in 0..POLISH_STEPS {
        let Some(g) = grad(&theta) else { break };
        let delta = -chol.solve(&g);
        if -g.dot(&delta) < 1e-16 * f.abs().max(1.0) {
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let cand = &theta + t * &delta;
            let p = layout.apply(&cand, template);
            if valid_point(&p) {
                if let Ok(f_new) = objective.deviance(&p) {
                    if f_new <= f {
                        theta = cand;
                        f = f_new;
                        trace.push(f);
                        moved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (theta, f)
}

/// Fit a univariate or parallel latent basis growth model by FIML.
pub fn fit(sample: &LongitudinalSample, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    spec.check()?;
    options.check()?;
    for o in &spec.outcomes {
        if sample.outcome_index(&o.label).is_none() {
            return Err(LbgmError::UnknownOutcome(o.label.clone()));
        }
    }
    let report = validate(sample);
    if !report.is_empty() {
        return Err(LbgmError::Invalid(report.to_string()));
    }

    let layout = ParamLayout::for_sample(spec, sample)?;
    let start = starting_values_with(sample, spec, &layout)?;
    let objective = Objective::new(spec, sample)?;
    let transform = Transform::new(&layout, spec.outcomes.len());
    let x_start = transform.to_unconstrained(&start)?;
    let settings = BfgsSettings {
        max_iterations: options.max_iterations,
        f_tol: options.deviance_tol,
        gradient_tol: options.gradient_tol,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);

    let search = |x: &DVector<f64>| {
        let p = transform.to_params(x, &start);
        objective
            .deviance_and_gradient(&p)
            .ok()
            .map(|(f, g)| (f, transform.pullback(x, &g)))
    };

    let mut best: Option<BfgsOutcome> = None;
    let mut attempts = 0;
    let mut converged = false;
    for attempt in 0..=options.max_retries {
        attempts += 1;
        let x0 = if attempt == 0 {
            x_start.clone()
        } else {
            jitter(&x_start, options.jitter_scale, &mut rng)
        };
        let out = minimize(&search, x0, &settings);
        let better = match &best {
            None => out.f.is_finite(),
            Some(b) => out.f < b.f,
        };
        if out.converged {
            best = Some(out);
            converged = true;
            break;
        }
        if better {
            best = Some(out);
        }
    }
    let Some(run) = best else {
        return Err(LbgmError::RetriesExhausted { attempts });
    };

    let mut trace = run.trace.clone();
    let bfgs_params = transform.to_params(&run.x, &start);
    let mut theta = layout.vector(&bfgs_params);
    let mut deviance = run.f;
    if converged {
        (theta, deviance) = polish(&objective, &layout, &bfgs_params, theta, deviance, &mut trace);
    }
    let estimates = layout.apply(&theta, &bfgs_params);

    let (max_gradient, vcov) = {
        let grad = natural_gradient(&objective, &layout, &estimates);
        let max_gradient = grad(&theta).map(|g| g.amax()).unwrap_or(f64::NAN);
        let vcov = if converged {
            hessian_from_gradient(&grad, &theta)
                .ok()
                .and_then(|h| h.cholesky())
                .map(|c| c.inverse() * 2.0)
                .map(|v| (&v + v.transpose()) * 0.5)
        } else {
            None
        };
        (max_gradient, vcov)
    };
    let se = match &vcov {
        Some(v) => v
            .diagonal()
            .iter()
            .map(|&d| (d >= 0.0).then(|| d.sqrt()))
            .collect(),
        None => vec![None; layout.len()],
    };

    let status = if !converged {
        FitStatus::RetriesExhausted
    } else if min_correlation_eigenvalue(&estimates.growth_cov()) < BOUNDARY_EIGEN_TOL
        || min_correlation_eigenvalue(&estimates.residual_cov()) < BOUNDARY_EIGEN_TOL
    {
        FitStatus::BoundaryPSD
    } else {
        FitStatus::Converged
    };

    let reference_times = spec
        .outcomes
        .iter()
        .map(|o| sample.mean_wave_times(sample.outcome_index(&o.label).unwrap()))
        .collect();

    Ok(FitResult {
        spec: spec.clone(),
        layout,
        estimates,
        estimate_vector: theta,
        se,
        vcov,
        deviance,
        status,
        iterations: run.iterations,
        attempts,
        n_used: sample.n(),
        trace,
        max_gradient,
        reference_times,
    })
}

/// Wald interval `estimate ± z·se` per free parameter; `None` where the SE is unavailable.
pub fn wald_ci(fit: &FitResult, level: f64) -> Vec<Option<(f64, f64)>> {
    let z = normal_quantile(0.5 * (1.0 + level));
    fit.estimate_vector
        .iter()
        .zip(&fit.se)
        .map(|(&est, se)| se.map(|s| (est - z * s, est + z * s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRow {
    pub parameter: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub pvalue: Option<f64>,
}

pub fn parameter_rows(fit: &FitResult) -> Vec<ParameterRow> {
    let ci = wald_ci(fit, 0.95);
    fit.names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let est = fit.estimate_vector[i];
            let se = fit.se[i];
            ParameterRow {
                parameter: name.clone(),
                estimate: est,
                se,
                ci: ci[i],
                pvalue: se.and_then(|s| (s > 0.0).then(|| two_sided_p(est / s))),
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// `parameter,estimate,se,ci_low,ci_high,pvalue` with `NA` where unavailable.
pub fn write_parameter_table<W: Write>(fit: &FitResult, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["parameter", "estimate", "se", "ci_low", "ci_high", "pvalue"])?;
    for row in parameter_rows(fit) {
        wtr.write_record([
            row.parameter.clone(),
            row.estimate.to_string(),
            fmt_opt(row.se),
            fmt_opt(row.ci.map(|c| c.0)),
            fmt_opt(row.ci.map(|c| c.1)),
            fmt_opt(row.pvalue),
        ])?;
    }
    wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
    Ok(())
}

fn parse_opt(s: &str) -> Option<f64> {
    s.parse().ok().filter(|v: &f64| !v.is_nan())
}

pub fn read_parameter_table<R: Read>(reader: R) -> Result<Vec<ParameterRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let lo = parse_opt(get(3));
        let hi = parse_opt(get(4));
        rows.push(ParameterRow {
            parameter: get(0).to_string(),
            estimate: parse_opt(get(1)).unwrap_or(f64::NAN),
            se: parse_opt(get(2)),
            ci: lo.zip(hi),
            pvalue: parse_opt(get(5)),
        });
    }
    Ok(rows)
}
