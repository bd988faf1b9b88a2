//! Method-of-moments starting values.

use super::layout::{ParamLayout, RateStructure};
use crate::data::LongitudinalSample;
use crate::error::{LbgmError, Result};
use crate::model::{CrossParams, ModelSpec, OutcomeParams, ParameterSet};
use crate::numeric::{covariance, mean, variance};

/// Starting rates outside this open interval, or exactly zero, are replaced.
const RATE_START_BOUND: f64 = 10.0;
const RATE_START_FALLBACK: f64 = 0.5;
const MAX_START_CORR: f64 = 0.9;

pub(crate) fn guard_rate(g: f64) -> f64 {
    if !g.is_finite() || g == 0.0 || g.abs() >= RATE_START_BOUND {
        RATE_START_FALLBACK
    } else {
        g
    }
}

fn floor_variance(v: f64, level: f64) -> f64 {
    let floor = 1e-4 * level.abs().max(1.0).powi(2);
    if v.is_finite() && v > floor {
        v
    } else {
        floor
    }
}

/// Per-unit-time change of every individual observed at both waves.
fn rates_between(sample: &LongitudinalSample, outcome: usize, a: usize, b: usize) -> Vec<f64> {
    sample
        .individuals()
        .iter()
        .filter_map(|ind| {
            let s = &ind.series[outcome];
            let (oa, ob) = (s.at_wave(a)?, s.at_wave(b)?);
            Some((ob.value - oa.value) / (ob.time - oa.time))
        })
        .collect()
}

fn first_wave_values(sample: &LongitudinalSample, outcome: usize, wave: usize) -> Vec<(usize, f64)> {
    sample
        .individuals()
        .iter()
        .enumerate()
        .filter_map(|(i, ind)| ind.series[outcome].at_wave(wave).map(|o| (i, o.value)))
        .collect()
}

fn outcome_start(
    sample: &LongitudinalSample,
    outcome: usize,
    rs: &RateStructure,
    waves: usize,
    label: &str,
    fixed_interval: usize,
) -> Result<OutcomeParams> {
    let first_wave = rs.groups[0][0] + 1;
    let base: Vec<f64> = first_wave_values(sample, outcome, first_wave)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let m0 = mean(&base);
    let v0 = variance(&base);

    let group_rates: Vec<Vec<f64>> = rs
        .groups
        .iter()
        .map(|g| rates_between(sample, outcome, g[0] + 1, g[g.len() - 1] + 2))
        .collect();
    let fixed_rates = &group_rates[rs.fixed_group];
    if fixed_rates.is_empty() {
        return Err(LbgmError::FixedIntervalUnobservable {
            outcome: label.into(),
            interval: fixed_interval,
        });
    }
    let mu1 = mean(fixed_rates);

    let mut gamma = vec![1.0; waves - 1];
    for (gi, g) in rs.groups.iter().enumerate() {
        let value = if gi == rs.fixed_group {
            1.0
        } else if group_rates[gi].is_empty() {
            RATE_START_FALLBACK
        } else {
            guard_rate(mean(&group_rates[gi]) / mu1)
        };
        for &k in g {
            gamma[k] = value;
        }
    }

    Ok(OutcomeParams {
        mu_eta0: m0,
        mu_eta1: mu1,
        psi00: floor_variance(0.5 * v0, m0),
        psi01: 0.0,
        psi11: floor_variance(0.5 * variance(fixed_rates), mu1),
        gamma,
        theta_eps: floor_variance(0.5 * v0, m0),
    })
}

/// Moment-based starting point: intercept moments from the first observed wave,
/// shape-factor moments from per-unit-time change over the fixed interval, and
/// relative rates from each interval's mean change divided by the fixed one.
pub fn starting_values(sample: &LongitudinalSample, spec: &ModelSpec) -> Result<ParameterSet> {
    let layout = ParamLayout::for_sample(spec, sample)?;
    starting_values_with(sample, spec, &layout)
}

pub(crate) fn starting_values_with(
    sample: &LongitudinalSample,
    spec: &ModelSpec,
    layout: &ParamLayout,
) -> Result<ParameterSet> {
    let mut outcomes = Vec::with_capacity(spec.outcomes.len());
    let mut index = Vec::with_capacity(spec.outcomes.len());
    for (u, o) in spec.outcomes.iter().enumerate() {
        let k = sample
            .outcome_index(&o.label)
            .ok_or_else(|| LbgmError::UnknownOutcome(o.label.clone()))?;
        index.push(k);
        outcomes.push(outcome_start(sample, k, &layout.rates[u], o.waves, &o.label, o.fixed_interval)?);
    }

    let cross = spec.has_cross().then(|| {
        let wy = layout.rates[0].groups[0][0] + 1;
        let wz = layout.rates[1].groups[0][0] + 1;
        let (mut ys, mut zs) = (Vec::new(), Vec::new());
        for ind in sample.individuals() {
            if let (Some(a), Some(b)) = (ind.series[index[0]].at_wave(wy), ind.series[index[1]].at_wave(wz)) {
                ys.push(a.value);
                zs.push(b.value);
            }
        }
        let c = 0.5 * covariance(&ys, &zs);
        let bound = MAX_START_CORR * (outcomes[0].psi00 * outcomes[1].psi00).sqrt();
        CrossParams {
            psi00: if c.is_finite() { c.clamp(-bound, bound) } else { 0.0 },
            ..CrossParams::default()
        }
    });

    Ok(ParameterSet { outcomes, cross })
}
