#![allow(dead_code)]

use lbgm::data::{Individual, LongitudinalSample, Observation, OutcomeSeries};
use lbgm::model::{CrossParams, ModelSpec, OutcomeModelSpec, OutcomeParams, ParameterSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const LN_2PI: f64 = 1.8378770664093453;

pub fn spec(labels: &[&str], waves: usize, fixed: usize) -> ModelSpec {
    ModelSpec::new(
        labels
            .iter()
            .map(|l| OutcomeModelSpec {
                label: l.to_string(),
                waves,
                fixed_interval: fixed,
            })
            .collect(),
    )
    .unwrap()
}

/// Random positive definite matrix `A Aᵀ + 0.5 I`.
fn random_pd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn random_params<R: Rng>(rng: &mut R, outcomes: usize, waves: usize, fixed: usize, cross: bool) -> ParameterSet {
    let psi = random_pd(rng, 2 * outcomes);
    let r = random_pd(rng, outcomes);
    let outs = (0..outcomes)
        .map(|u| {
            let mut gamma: Vec<f64> = (0..waves - 1).map(|_| rng.random_range(0.2..1.5)).collect();
            gamma[fixed - 1] = 1.0;
            OutcomeParams {
                mu_eta0: rng.random_range(-5.0..5.0),
                mu_eta1: rng.random_range(-2.0..2.0),
                psi00: psi[(2 * u, 2 * u)],
                psi01: psi[(2 * u, 2 * u + 1)],
                psi11: psi[(2 * u + 1, 2 * u + 1)],
                gamma,
                theta_eps: r[(u, u)],
            }
        })
        .collect();
    let cross = (outcomes == 2 && cross).then(|| CrossParams {
        psi00: psi[(0, 2)],
        psi01: psi[(0, 3)],
        psi10: psi[(1, 2)],
        psi11: psi[(1, 3)],
        theta_eps: r[(0, 1)],
    });
    ParameterSet { outcomes: outs, cross }
}

/// Individuals observed around integer wave times; entries dropped at random with
/// at least one kept per outcome. The first individual is complete.
pub fn random_sample<R: Rng>(rng: &mut R, n: usize, waves: usize, labels: &[&str], drop: f64) -> LongitudinalSample {
    let individuals = (0..n)
        .map(|i| {
            let times: Vec<f64> = (0..waves).map(|w| w as f64 + rng.random_range(-0.3..0.3)).collect();
            let series = labels
                .iter()
                .map(|l| {
                    let keep: Vec<bool> = (0..waves).map(|_| i == 0 || rng.random::<f64>() >= drop).collect();
                    let mut observations: Vec<Observation> = (0..waves)
                        .filter(|&w| keep[w])
                        .map(|w| Observation {
                            wave: w + 1,
                            time: times[w],
                            value: rng.random_range(-3.0..8.0),
                        })
                        .collect();
                    if observations.is_empty() {
                        let w = rng.random_range(0..waves);
                        observations.push(Observation {
                            wave: w + 1,
                            time: times[w],
                            value: rng.random_range(-3.0..8.0),
                        });
                    }
                    OutcomeSeries {
                        label: l.to_string(),
                        observations,
                        waves,
                    }
                })
                .collect();
            Individual {
                id: format!("i{i}"),
                series,
            }
        })
        .collect();
    LongitudinalSample::new(individuals, labels.iter().map(|s| s.to_string()).collect(), vec![waves; labels.len()])
}

/// Shape loadings of one series, computed by walking cumulative rate-weighted
/// elapsed time from the first observation. Skipped waves between observations
/// get boundary times interpolated in wave index.
fn oracle_loadings(series: &OutcomeSeries, gamma: &[f64]) -> Vec<f64> {
    let obs = &series.observations;
    let mut boundary: Vec<Option<f64>> = vec![None; series.waves + 1];
    for o in obs {
        boundary[o.wave] = Some(o.time);
    }
    for pair in obs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let steps = (b.wave - a.wave) as f64;
        for w in a.wave + 1..b.wave {
            let frac = (w - a.wave) as f64 / steps;
            boundary[w] = Some(a.time + frac * (b.time - a.time));
        }
    }
    let first = obs[0].wave;
    obs.iter()
        .map(|o| {
            let mut total = 0.0;
            for w in first..o.wave {
                total += gamma[w - 1] * (boundary[w + 1].unwrap() - boundary[w].unwrap());
            }
            total
        })
        .collect()
}

/// −2 log-likelihood built entry by entry from the model definition and
/// evaluated with an LU factorization.
pub fn oracle_deviance(params: &ParameterSet, spec: &ModelSpec, sample: &LongitudinalSample) -> f64 {
    let cross = params.cross.unwrap_or_default();
    let mut total = 0.0;
    for ind in sample.individuals() {
        // (outcome, wave, value, loading)
        let mut entries = Vec::new();
        for (u, o) in spec.outcomes.iter().enumerate() {
            let series = ind.series.iter().find(|s| s.label == o.label).unwrap();
            let l = oracle_loadings(series, &params.outcomes[u].gamma);
            for (obs, l) in series.observations.iter().zip(l) {
                entries.push((u, obs.wave, obs.value, l));
            }
        }
        let p = entries.len();
        let growth_cov = |a: usize, b: usize| -> [[f64; 2]; 2] {
            if a == b {
                let o = &params.outcomes[a];
                [[o.psi00, o.psi01], [o.psi01, o.psi11]]
            } else if a == 0 {
                [[cross.psi00, cross.psi01], [cross.psi10, cross.psi11]]
            } else {
                [[cross.psi00, cross.psi10], [cross.psi01, cross.psi11]]
            }
        };
        let mut mean = DVector::zeros(p);
        let mut cov = DMatrix::zeros(p, p);
        for (r, &(ua, wa, _, la)) in entries.iter().enumerate() {
            let o = &params.outcomes[ua];
            mean[r] = o.mu_eta0 + o.mu_eta1 * la;
            for (c, &(ub, wb, _, lb)) in entries.iter().enumerate() {
                let g = growth_cov(ua, ub);
                let mut v = g[0][0] + g[0][1] * lb + g[1][0] * la + g[1][1] * la * lb;
                if r == c {
                    v += o.theta_eps;
                } else if ua != ub && wa == wb {
                    v += cross.theta_eps;
                }
                cov[(r, c)] = v;
            }
        }
        let x = DVector::from_iterator(p, entries.iter().map(|e| e.2));
        let resid = x - mean;
        let lu = cov.clone().lu();
        let det = lu.determinant();
        let sol = lu.solve(&resid).unwrap();
        total += p as f64 * LN_2PI + det.ln() + resid.dot(&sol);
    }
    total
}
