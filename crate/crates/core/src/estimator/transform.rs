//! Unconstrained coordinates used during the search.
//!
//! Means and free relative rates are used as-is. The growth-factor covariance and
//! the per-wave residual covariance are parameterized by lower-triangular factors
//! `L` with `Σ = L Lᵀ` and log-scale diagonals, so every point is positive
//! semi-definite. When the between-construct covariances are absent the factors
//! are block diagonal, one block per outcome.

use nalgebra::{DMatrix, DVector};

use super::deviance::NaturalGradient;
use super::layout::ParamLayout;
use crate::error::{LbgmError, Result};
use crate::model::{CrossParams, ParameterSet};

/// Log-diagonals are clamped to this range when mapping back.
const LOG_DIAG_BOUND: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct Transform {
    layout: ParamLayout,
    outcomes: usize,
}

fn lower_entries(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|r| (0..=r).map(move |c| (r, c))).collect()
}

impl Transform {
    pub fn new(layout: &ParamLayout, outcomes: usize) -> Self {
        Self {
            layout: layout.clone(),
            outcomes,
        }
    }

    /// Diagonal blocks, as (offset, size), of the factored covariance matrices.
    fn blocks(&self, per_outcome: usize) -> Vec<(usize, usize)> {
        if self.layout.has_cross {
            vec![(0, per_outcome * self.outcomes)]
        } else {
            (0..self.outcomes).map(|u| (u * per_outcome, per_outcome)).collect()
        }
    }

    fn free_gammas(&self) -> Vec<(usize, usize)> {
        self.layout
            .rates
            .iter()
            .enumerate()
            .flat_map(|(u, rs)| rs.free_groups().map(move |g| (u, g)))
            .collect()
    }

    pub fn dim(&self) -> usize {
        let tri = |n: usize| n * (n + 1) / 2;
        let factored: usize = self.blocks(2).iter().map(|&(_, n)| tri(n)).sum::<usize>()
            + self.blocks(1).iter().map(|&(_, n)| tri(n)).sum::<usize>();
        2 * self.outcomes + self.free_gammas().len() + factored
    }

    pub fn to_unconstrained(&self, params: &ParameterSet) -> Result<DVector<f64>> {
        let mut x = Vec::with_capacity(self.dim());
        for o in &params.outcomes {
            x.push(o.mu_eta0);
            x.push(o.mu_eta1);
        }
        for (u, g) in self.free_gammas() {
            x.push(params.outcomes[u].gamma[self.layout.rates[u].groups[g][0]]);
        }
        for (cov, per) in [(params.growth_cov(), 2), (params.residual_cov(), 1)] {
            for (off, n) in self.blocks(per) {
                let block = cov.view((off, off), (n, n)).into_owned();
                let l = block
                    .cholesky()
                    .ok_or_else(|| {
                        LbgmError::Parameters("covariance block is not positive definite".into())
                    })?
                    .unpack();
                for (r, c) in lower_entries(n) {
                    x.push(if r == c { l[(r, c)].ln() } else { l[(r, c)] });
                }
            }
        }
        Ok(DVector::from_vec(x))
    }

    fn factor(x: &[f64], n: usize) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(n, n);
        for ((r, c), &v) in lower_entries(n).into_iter().zip(x) {
            l[(r, c)] = if r == c {
                v.clamp(-LOG_DIAG_BOUND, LOG_DIAG_BOUND).exp()
            } else {
                v
            };
        }
        l
    }

    /// Covariance factors (growth, residual) encoded in `x`.
    fn factors(&self, x: &DVector<f64>) -> (Vec<(usize, DMatrix<f64>)>, Vec<(usize, DMatrix<f64>)>) {
        let mut pos = 2 * self.outcomes + self.free_gammas().len();
        let mut take = |per: usize| {
            self.blocks(per)
                .into_iter()
                .map(|(off, n)| {
                    let len = n * (n + 1) / 2;
                    let l = Self::factor(&x.as_slice()[pos..pos + len], n);
                    pos += len;
                    (off, l)
                })
                .collect::<Vec<_>>()
        };
        let growth = take(2);
        let residual = take(1);
        (growth, residual)
    }

    pub fn to_params(&self, x: &DVector<f64>, template: &ParameterSet) -> ParameterSet {
        let k = self.outcomes;
        let mut p = template.clone();
        for u in 0..k {
            p.outcomes[u].mu_eta0 = x[2 * u];
            p.outcomes[u].mu_eta1 = x[2 * u + 1];
        }
        for (i, (u, g)) in self.free_gammas().into_iter().enumerate() {
            for &interval in &self.layout.rates[u].groups[g] {
                p.outcomes[u].gamma[interval] = x[2 * k + i];
            }
        }
        self.layout.pin_fixed(&mut p);

        let (growth, residual) = self.factors(x);
        let mut psi = DMatrix::zeros(2 * k, 2 * k);
        for (off, l) in growth {
            let n = l.nrows();
            psi.view_mut((off, off), (n, n)).copy_from(&(&l * l.transpose()));
        }
        let mut r = DMatrix::zeros(k, k);
        for (off, l) in residual {
            let n = l.nrows();
            r.view_mut((off, off), (n, n)).copy_from(&(&l * l.transpose()));
        }
        for u in 0..k {
            let o = &mut p.outcomes[u];
            o.psi00 = psi[(2 * u, 2 * u)];
            o.psi01 = psi[(2 * u, 2 * u + 1)];
            o.psi11 = psi[(2 * u + 1, 2 * u + 1)];
            o.theta_eps = r[(u, u)];
        }
        if k == 2 {
            p.cross = self.layout.has_cross.then(|| CrossParams {
                psi00: psi[(0, 2)],
                psi01: psi[(0, 3)],
                psi10: psi[(1, 2)],
                psi11: psi[(1, 3)],
                theta_eps: r[(0, 1)],
            });
        }
        p
    }

    /// Chain rule from the natural-parameter gradient to the unconstrained coordinates.
    pub fn pullback(&self, x: &DVector<f64>, grad: &NaturalGradient) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(grad.means.iter().copied());
        for (u, g) in self.free_gammas() {
            out.push(self.layout.rates[u].groups[g].iter().map(|&i| grad.gamma[u][i]).sum());
        }
        let (growth, residual) = self.factors(x);
        for (blocks, g) in [(growth, &grad.psi), (residual, &grad.residual)] {
            for (off, l) in blocks {
                let n = l.nrows();
                let gb = g.view((off, off), (n, n)).into_owned();
                // Σ = L Lᵀ with symmetric entrywise gradient G gives ∂/∂L = 2 G L.
                let dl = 2.0 * gb * &l;
                for (r, c) in lower_entries(n) {
                    out.push(if r == c { dl[(r, c)] * l[(r, c)] } else { dl[(r, c)] });
                }
            }
        }
        debug_assert_eq!(out.len(), self.dim());
        DVector::from_vec(out)
    }
}
