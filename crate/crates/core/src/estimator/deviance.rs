//! Full-information maximum likelihood deviance and its analytic gradient.

use nalgebra::{DMatrix, DVector};

use super::layout::{CrossKind, ParamLayout, Slot};
use crate::data::LongitudinalSample;
use crate::error::{LbgmError, Result};
use crate::model::{IndividualDesign, ModelSpec, ParameterSet};
use crate::numeric::ExactSum;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Deviance derivatives with respect to the building blocks of the implied moments.
///
/// `psi` and `residual` hold the derivative with respect to each matrix entry taken
/// as an independent variable (both are symmetric).
#[derive(Debug, Clone)]
pub struct NaturalGradient {
    pub means: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    /// Per outcome, derivative with respect to each interval's relative rate.
    pub gamma: Vec<DVector<f64>>,
}

impl NaturalGradient {
    /// Collapse onto the free parameters of `layout`.
    pub fn to_vector(&self, layout: &ParamLayout) -> DVector<f64> {
        DVector::from_iterator(
            layout.len(),
            layout.slots.iter().map(|&slot| match slot {
                Slot::Mu0(u) => self.means[2 * u],
                Slot::Mu1(u) => self.means[2 * u + 1],
                Slot::Psi00(u) => self.psi[(2 * u, 2 * u)],
                Slot::Psi01(u) => 2.0 * self.psi[(2 * u, 2 * u + 1)],
                Slot::Psi11(u) => self.psi[(2 * u + 1, 2 * u + 1)],
                Slot::Gamma { outcome, group } => layout.rates[outcome].groups[group]
                    .iter()
                    .map(|&k| self.gamma[outcome][k])
                    .sum(),
                Slot::Theta(u) => self.residual[(u, u)],
                Slot::Cross(CrossKind::Psi00) => 2.0 * self.psi[(0, 2)],
                Slot::Cross(CrossKind::Psi01) => 2.0 * self.psi[(0, 3)],
                Slot::Cross(CrossKind::Psi10) => 2.0 * self.psi[(1, 2)],
                Slot::Cross(CrossKind::Psi11) => 2.0 * self.psi[(1, 3)],
                Slot::Cross(CrossKind::Theta) => 2.0 * self.residual[(0, 1)],
            }),
        )
    }
}

/// Precomputed per-individual designs for repeated deviance evaluation.
#[derive(Debug, Clone)]
pub struct Objective {
    designs: Vec<IndividualDesign>,
    outcomes: usize,
    waves: Vec<usize>,
}

struct GradAccumulator {
    means: Vec<ExactSum>,
    psi: Vec<ExactSum>,
    residual: Vec<ExactSum>,
    gamma: Vec<Vec<ExactSum>>,
}

impl Objective {
    pub fn new(spec: &ModelSpec, sample: &LongitudinalSample) -> Result<Self> {
        let designs = sample
            .individuals()
            .iter()
            .map(|ind| IndividualDesign::new(spec, ind))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            designs,
            outcomes: spec.outcomes.len(),
            waves: spec.outcomes.iter().map(|o| o.waves).collect(),
        })
    }

    pub fn designs(&self) -> &[IndividualDesign] {
        &self.designs
    }

    /// Number of observed entries across all individuals.
    pub fn observed_entries(&self) -> usize {
        self.designs.iter().map(|d| d.len()).sum()
    }

    pub fn deviance(&self, params: &ParameterSet) -> Result<f64> {
        let mut total = ExactSum::new();
        for d in &self.designs {
            let lambda = d.loadings(params);
            let (mean, cov) = d.moments_with(params, &lambda);
            let chol = cov
                .cholesky()
                .ok_or_else(|| LbgmError::NotPositiveDefinite { id: d.id.clone() })?;
            let resid = &d.values - mean;
            let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let quad = resid.dot(&chol.solve(&resid));
            total.add(d.len() as f64 * LN_2PI + logdet + quad);
        }
        Ok(total.value())
    }

    pub fn deviance_and_gradient(&self, params: &ParameterSet) -> Result<(f64, NaturalGradient)> {
        let k = self.outcomes;
        let m = params.growth_means();
        let psi = params.growth_cov();
        let mut total = ExactSum::new();
        let mut acc = GradAccumulator {
            means: vec![ExactSum::new(); 2 * k],
            psi: vec![ExactSum::new(); 4 * k * k],
            residual: vec![ExactSum::new(); k * k],
            gamma: self.waves.iter().map(|&j| vec![ExactSum::new(); j - 1]).collect(),
        };

        for d in &self.designs {
            let p = d.len();
            let lambda = d.loadings(params);
            let (mean, cov) = d.moments_with(params, &lambda);
            let chol = cov
                .cholesky()
                .ok_or_else(|| LbgmError::NotPositiveDefinite { id: d.id.clone() })?;
            let resid = &d.values - mean;
            let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let a = chol.solve(&resid);
            total.add(p as f64 * LN_2PI + logdet + resid.dot(&a));

            // W = Σ⁻¹ − a aᵀ; d(dev) = tr(W dΣ) − 2 aᵀ dμ
            let mut w = chol.inverse();
            w.ger(-1.0, &a, &a, 1.0);

            let lta = lambda.transpose() * &a;
            for i in 0..2 * k {
                acc.means[i].add(-2.0 * lta[i]);
            }
            let wl = &w * &lambda;
            let g_psi = lambda.transpose() * &wl;
            for (s, v) in acc.psi.iter_mut().zip(g_psi.iter()) {
                s.add(*v);
            }
            for (e, &(u, _)) in d.entry_index.iter().enumerate() {
                acc.residual[u * k + u].add(w[(e, e)]);
            }
            if k == 2 {
                let cross: f64 = d.wave_pairs.iter().map(|&(a_, b_)| w[(a_, b_)]).sum();
                acc.residual[1].add(cross);
                acc.residual[2].add(cross);
            }
            // dev gradient w.r.t. Λ: 2 W Λ Ψ − 2 a mᵀ, needed only in shape columns.
            for (u, (start, overlaps)) in d.blocks.iter().enumerate() {
                let col = 2 * u + 1;
                let wlpsi_col = &wl * psi.column(col);
                for r in 0..overlaps.nrows() {
                    let row = start + r;
                    let g = 2.0 * wlpsi_col[row] - 2.0 * a[row] * m[col];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..overlaps.ncols() {
                        let o = overlaps[(r, c)];
                        if o != 0.0 {
                            acc.gamma[u][c].add(g * o);
                        }
                    }
                }
            }
        }

        let grad = NaturalGradient {
            means: DVector::from_iterator(2 * k, acc.means.iter().map(|s| s.value())),
            psi: DMatrix::from_iterator(2 * k, 2 * k, acc.psi.iter().map(|s| s.value())),
            residual: DMatrix::from_iterator(k, k, acc.residual.iter().map(|s| s.value())),
            gamma: acc
                .gamma
                .iter()
                .map(|g| DVector::from_iterator(g.len(), g.iter().map(|s| s.value())))
                .collect(),
        };
        Ok((total.value(), grad))
    }
}

/// −2 log-likelihood of the sample under `params`, each individual contributing
/// over their observed entries only (constants included).
pub fn fiml_deviance(params: &ParameterSet, spec: &ModelSpec, sample: &LongitudinalSample) -> Result<f64> {
    params.check(spec)?;
    Objective::new(spec, sample)?.deviance(params)
}

/// Analytic deviance gradient over the free parameters of the sample's layout.
pub fn analytic_gradient(
    params: &ParameterSet,
    spec: &ModelSpec,
    sample: &LongitudinalSample,
) -> Result<DVector<f64>> {
    let layout = ParamLayout::for_sample(spec, sample)?;
    let (_, g) = Objective::new(spec, sample)?.deviance_and_gradient(params)?;
    Ok(g.to_vector(&layout))
}
