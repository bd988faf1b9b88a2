//! Draw samples from a [`SimulationDesign`].

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::design::SimulationDesign;
use crate::data::{Individual, LongitudinalSample, Observation, OutcomeSeries};
use crate::error::{LbgmError, Result};
use crate::model::{build_loading_matrix, ParameterSet};

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub sample: LongitudinalSample,
    /// Population values on the full grid.
    pub population: ParameterSet,
    /// Growth factors per individual, ordered `(η0, η1)` per outcome.
    pub factors: Vec<DVector<f64>>,
}

/// A matrix `S` with `S Sᵀ = cov`; falls back to the eigen square root for
/// singular positive semi-definite input.
fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.unpack());
    }
    let eig = cov.clone().symmetric_eigen();
    let scale = cov.diagonal().amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(LbgmError::Design("covariance is not positive semi-definite".into()));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Simulate one sample: growth factors jointly normal, individual times uniform
/// around each wave, loadings from the individual's own intervals, and residuals
/// correlated between outcomes at the same wave. Masked waves are dropped.
pub fn generate_dataset<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Result<GeneratedData> {
    design.check()?;
    let k = design.outcomes.len();
    let j = design.waves();
    let means = design.growth_means();
    let factor_root = psd_sqrt(&design.growth_cov())?;
    let resid_root = psd_sqrt(&design.residual_cov())?;
    let all_waves: Vec<usize> = (1..=j).collect();
    let observed: Vec<BTreeSet<usize>> = design.outcomes.iter().map(|o| design.observed_waves(o)).collect();

    let mut individuals = Vec::with_capacity(design.n);
    let mut factors = Vec::with_capacity(design.n);
    for i in 0..design.n {
        let eta = &means + &factor_root * normal_vector(rng, 2 * k);
        let times: Vec<f64> = design
            .wave_times
            .iter()
            .map(|&t| {
                let u: f64 = rng.random();
                t + design.delta * (2.0 * u - 1.0)
            })
            .collect();
        let resid: Vec<DVector<f64>> = (0..j).map(|_| &resid_root * normal_vector(rng, k)).collect();

        let series = design
            .outcomes
            .iter()
            .enumerate()
            .map(|(u, o)| {
                let lambda = build_loading_matrix(&times, &o.gammas, &all_waves, j, times[0])?;
                let observations = (0..j)
                    .filter(|w| observed[u].contains(&(w + 1)))
                    .map(|w| Observation {
                        wave: w + 1,
                        time: times[w],
                        value: eta[2 * u] + eta[2 * u + 1] * lambda[(w, 1)] + resid[w][u],
                    })
                    .collect();
                Ok(OutcomeSeries {
                    label: o.label.clone(),
                    observations,
                    waves: j,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        individuals.push(Individual {
            id: (i + 1).to_string(),
            series,
        });
        factors.push(eta);
    }
    let labels = design.outcomes.iter().map(|o| o.label.clone()).collect();
    Ok(GeneratedData {
        sample: LongitudinalSample::new(individuals, labels, vec![j; k]),
        population: design.population(),
        factors,
    })
}
