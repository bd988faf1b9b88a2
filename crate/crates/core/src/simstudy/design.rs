//! Population design for simulated parallel growth data.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LbgmError, Result};
use crate::estimator::{ParamLayout, RateStructure};
use crate::model::{is_psd, CrossParams, ModelSpec, OutcomeModelSpec, OutcomeParams, ParameterSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDesign {
    pub label: String,
    pub mu_eta0: f64,
    pub mu_eta1: f64,
    pub var_eta0: f64,
    pub var_eta1: f64,
    /// Correlation between intercept and shape factor.
    pub within_corr: f64,
    /// Relative rate per interval, `wave_times.len() - 1` entries.
    pub gammas: Vec<f64>,
    /// 1-based interval whose relative rate is 1.
    pub fixed_interval: usize,
    pub theta_eps: f64,
    /// 1-based waves that are never observed for this outcome.
    #[serde(default)]
    pub missing_waves: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub n: usize,
    pub wave_times: Vec<f64>,
    /// Half-width of the uniform window around each wave time.
    pub delta: f64,
    /// Correlation applied to every intercept/shape pair across outcomes.
    #[serde(default)]
    pub between_corr: f64,
    /// Correlation between the two outcomes' residuals at the same wave.
    #[serde(default)]
    pub residual_corr: f64,
    pub outcomes: Vec<OutcomeDesign>,
}

fn check_corr(name: &str, r: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(LbgmError::Design(format!("{name} = {r} is outside [-1, 1]")));
    }
    Ok(())
}

impl SimulationDesign {
    /// Ten-wave unequally spaced grid, verbatim. The 2.55 → 3.00 gap is 0.45, so
    /// the time half-width must stay below 0.225 for windows not to overlap.
    pub const UNEQUAL_TEN_WAVE_TIMES: [f64; 10] = [0.0, 0.75, 1.50, 2.55, 3.00, 3.75, 4.50, 6.00, 7.50, 9.00];

    /// Two outcomes, 500 individuals, ten unit-spaced waves with relative rates
    /// falling from 1.0 to 0.2, between-construct correlation 0.3 and unit
    /// residual variances.
    pub fn ten_wave_decreasing() -> Self {
        let gammas: Vec<f64> = (0..9).map(|k| (10 - k) as f64 / 10.0).collect();
        let outcome = |label: &str, mu0: f64, mu1: f64| OutcomeDesign {
            label: label.into(),
            mu_eta0: mu0,
            mu_eta1: mu1,
            var_eta0: 25.0,
            var_eta1: 1.0,
            within_corr: 0.3,
            gammas: gammas.clone(),
            fixed_interval: 1,
            theta_eps: 1.0,
            missing_waves: Vec::new(),
        };
        Self {
            n: 500,
            wave_times: (0..10).map(f64::from).collect(),
            delta: 0.25,
            between_corr: 0.3,
            residual_corr: 0.3,
            outcomes: vec![outcome("y", 50.0, 4.0), outcome("z", 30.0, 5.0)],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let d: Self = toml::from_str(text).map_err(|e| LbgmError::Design(e.to_string()))?;
        d.check()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LbgmError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("design serializes")
    }

    pub fn waves(&self) -> usize {
        self.wave_times.len()
    }

    pub fn check(&self) -> Result<()> {
        let j = self.waves();
        if self.n == 0 {
            return Err(LbgmError::Design("n must be positive".into()));
        }
        if j < 2 {
            return Err(LbgmError::Design("at least two waves are required".into()));
        }
        if self.outcomes.is_empty() || self.outcomes.len() > 2 {
            return Err(LbgmError::Design("designs have one or two outcomes".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(LbgmError::Design("delta must be nonnegative".into()));
        }
        let min_gap = self
            .wave_times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if !(min_gap > 0.0) {
            return Err(LbgmError::Design("wave times must be strictly increasing".into()));
        }
        if !(2.0 * self.delta < min_gap) {
            return Err(LbgmError::Design(format!(
                "time windows overlap: 2·delta = {} is not below the smallest gap {min_gap}",
                2.0 * self.delta
            )));
        }
        check_corr("between_corr", self.between_corr)?;
        check_corr("residual_corr", self.residual_corr)?;
        for o in &self.outcomes {
            check_corr(&format!("{}.within_corr", o.label), o.within_corr)?;
            if o.gammas.len() != j - 1 {
                return Err(LbgmError::Design(format!(
                    "{}: expected {} relative rates, got {}",
                    o.label,
                    j - 1,
                    o.gammas.len()
                )));
            }
            if o.fixed_interval < 1 || o.fixed_interval > j - 1 {
                return Err(LbgmError::Design(format!("{}: fixed_interval out of range", o.label)));
            }
            if o.gammas[o.fixed_interval - 1] != 1.0 {
                return Err(LbgmError::Design(format!(
                    "{}: relative rate of the fixed interval must be 1",
                    o.label
                )));
            }
            if o.var_eta0 < 0.0 || o.var_eta1 < 0.0 || o.theta_eps < 0.0 {
                return Err(LbgmError::Design(format!("{}: negative variance", o.label)));
            }
            if o.missing_waves.iter().any(|&w| w < 1 || w > j) {
                return Err(LbgmError::Design(format!("{}: missing wave out of range", o.label)));
            }
            if self.observed_waves(o).len() < 2 {
                return Err(LbgmError::Design(format!("{}: fewer than two observed waves", o.label)));
            }
        }
        if self.outcomes.len() == 2 && self.outcomes[0].label == self.outcomes[1].label {
            return Err(LbgmError::Design("outcome labels must differ".into()));
        }
        if !is_psd(&self.growth_cov()) {
            return Err(LbgmError::Design("growth-factor covariance is not positive semi-definite".into()));
        }
        Ok(())
    }

    pub fn observed_waves(&self, outcome: &OutcomeDesign) -> BTreeSet<usize> {
        (1..=self.waves()).filter(|w| !outcome.missing_waves.contains(w)).collect()
    }

    /// Means ordered `(η0, η1)` per outcome.
    pub fn growth_means(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.outcomes.len(),
            self.outcomes.iter().flat_map(|o| [o.mu_eta0, o.mu_eta1]),
        )
    }

    pub fn growth_cov(&self) -> DMatrix<f64> {
        let k = self.outcomes.len();
        let sd: Vec<f64> = self
            .outcomes
            .iter()
            .flat_map(|o| [o.var_eta0.sqrt(), o.var_eta1.sqrt()])
            .collect();
        DMatrix::from_fn(2 * k, 2 * k, |r, c| {
            let corr = if r == c {
                1.0
            } else if r / 2 == c / 2 {
                self.outcomes[r / 2].within_corr
            } else {
                self.between_corr
            };
            corr * sd[r] * sd[c]
        })
    }

    pub fn residual_cov(&self) -> DMatrix<f64> {
        let k = self.outcomes.len();
        DMatrix::from_fn(k, k, |r, c| {
            let (a, b) = (self.outcomes[r].theta_eps, self.outcomes[c].theta_eps);
            if r == c {
                a
            } else {
                self.residual_corr * (a * b).sqrt()
            }
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| OutcomeModelSpec {
                label: o.label.clone(),
                waves: self.waves(),
                fixed_interval: o.fixed_interval,
            })
            .collect();
        ModelSpec::new(outcomes).expect("checked design gives a valid spec")
    }

    /// Population values on the full wave grid.
    pub fn population(&self) -> ParameterSet {
        let psi = self.growth_cov();
        let r = self.residual_cov();
        let outcomes = self
            .outcomes
            .iter()
            .enumerate()
            .map(|(u, o)| OutcomeParams {
                mu_eta0: o.mu_eta0,
                mu_eta1: o.mu_eta1,
                psi00: psi[(2 * u, 2 * u)],
                psi01: psi[(2 * u, 2 * u + 1)],
                psi11: psi[(2 * u + 1, 2 * u + 1)],
                gamma: o.gammas.clone(),
                theta_eps: o.theta_eps,
            })
            .collect();
        let cross = (self.outcomes.len() == 2).then(|| CrossParams {
            psi00: psi[(0, 2)],
            psi01: psi[(0, 3)],
            psi10: psi[(1, 2)],
            psi11: psi[(1, 3)],
            theta_eps: r[(0, 1)],
        });
        ParameterSet { outcomes, cross }
    }

    pub fn rate_structures(&self) -> Result<Vec<RateStructure>> {
        self.outcomes
            .iter()
            .map(|o| RateStructure::from_observed(&self.observed_waves(o), self.waves(), o.fixed_interval, &o.label))
            .collect()
    }

    /// Layout of the model fitted to data drawn from this design.
    pub fn layout(&self) -> Result<ParamLayout> {
        Ok(ParamLayout::new(&self.model_spec(), self.rate_structures()?))
    }

    /// Parameters of the fitted model that correspond to the population.
    ///
    /// Rates of intervals merged by unobserved waves become the length-weighted
    /// mean of the population rates they span on the nominal grid, rescaled so the
    /// fixed group is 1. When the first waves are unobserved the intercept moves to
    /// the first observed wave: `η0' = η0 + c·η1` with `c` the nominal loading there.
    pub fn truth(&self, rates: &[RateStructure]) -> ParameterSet {
        let pop = self.population();
        let k = self.outcomes.len();
        let t = &self.wave_times;
        let mut a = DMatrix::<f64>::identity(2 * k, 2 * k);
        let mut gammas = Vec::with_capacity(k);
        for (u, o) in self.outcomes.iter().enumerate() {
            let rs = &rates[u];
            let mut g = o.gammas.clone();
            for group in &rs.groups {
                let len: f64 = group.iter().map(|&i| t[i + 1] - t[i]).sum();
                let area: f64 = group.iter().map(|&i| o.gammas[i] * (t[i + 1] - t[i])).sum();
                for &i in group {
                    g[i] = area / len;
                }
            }
            let scale = g[rs.groups[rs.fixed_group][0]];
            let first = rs.groups[0][0];
            let shift: f64 = (0..first).map(|i| o.gammas[i] * (t[i + 1] - t[i])).sum();
            a[(2 * u, 2 * u + 1)] = shift;
            a[(2 * u + 1, 2 * u + 1)] = scale;
            gammas.push(g.iter().map(|v| v / scale).collect::<Vec<_>>());
        }
        let m = &a * pop.growth_means();
        let psi = &a * pop.growth_cov() * a.transpose();
        let outcomes = pop
            .outcomes
            .iter()
            .enumerate()
            .map(|(u, o)| OutcomeParams {
                mu_eta0: m[2 * u],
                mu_eta1: m[2 * u + 1],
                psi00: psi[(2 * u, 2 * u)],
                psi01: psi[(2 * u, 2 * u + 1)],
                psi11: psi[(2 * u + 1, 2 * u + 1)],
                gamma: gammas[u].clone(),
                theta_eps: o.theta_eps,
            })
            .collect();
        let cross = pop.cross.map(|c| CrossParams {
            psi00: psi[(0, 2)],
            psi01: psi[(0, 3)],
            psi10: psi[(1, 2)],
            psi11: psi[(1, 3)],
            theta_eps: c.theta_eps,
        });
        ParameterSet { outcomes, cross }
    }
}
