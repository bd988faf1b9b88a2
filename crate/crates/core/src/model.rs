//! Factor loadings and model-implied moments for univariate and parallel latent
//! basis growth models with individual measurement occasions.
//!
//! The shape factor of each outcome is the growth rate over one designated
//! interval (`fixed_interval`); every other interval carries a relative rate
//! `gamma[k]`. The loading of the shape factor at an occasion is the
//! change-from-baseline divided by the shape factor, i.e. the rate-weighted
//! elapsed time since the individual's first observation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Individual, OutcomeSeries};
use crate::error::{LbgmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    pub label: String,
    /// Total wave count J.
    #[serde(rename = "J")]
    pub waves: usize,
    /// 1-based interval whose relative rate is fixed to 1.
    pub fixed_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcomes: Vec<OutcomeModelSpec>,
    /// Hold every between-construct covariance at zero (parallel models only).
    #[serde(default)]
    pub cross_fixed_zero: bool,
}

impl ModelSpec {
    pub fn new(outcomes: Vec<OutcomeModelSpec>) -> Result<Self> {
        let spec = Self {
            outcomes,
            cross_fixed_zero: false,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn univariate(label: &str, waves: usize, fixed_interval: usize) -> Result<Self> {
        Self::new(vec![OutcomeModelSpec {
            label: label.into(),
            waves,
            fixed_interval,
        }])
    }

    pub fn check(&self) -> Result<()> {
        if self.outcomes.is_empty() || self.outcomes.len() > 2 {
            return Err(LbgmError::Spec(format!(
                "expected 1 or 2 outcomes, got {}",
                self.outcomes.len()
            )));
        }
        if self.outcomes.len() == 2 && self.outcomes[0].label == self.outcomes[1].label {
            return Err(LbgmError::Spec("outcome labels must differ".into()));
        }
        for o in &self.outcomes {
            if o.waves < 3 {
                return Err(LbgmError::Spec(format!(
                    "outcome `{}` needs at least 3 waves, has {}",
                    o.label, o.waves
                )));
            }
            if o.fixed_interval < 1 || o.fixed_interval > o.waves - 1 {
                return Err(LbgmError::Spec(format!(
                    "fixed_interval {} of outcome `{}` outside 1..={}",
                    o.fixed_interval,
                    o.label,
                    o.waves - 1
                )));
            }
        }
        Ok(())
    }

    pub fn parallel(&self) -> bool {
        self.outcomes.len() == 2
    }

    /// True when the growth factors and residuals of the two outcomes are correlated.
    pub fn has_cross(&self) -> bool {
        self.parallel() && !self.cross_fixed_zero
    }

    /// Same model with the shape factor of each outcome rescaled to another interval.
    pub fn with_fixed_intervals(&self, fixed: &[usize]) -> Result<Self> {
        assert_eq!(fixed.len(), self.outcomes.len());
        let mut out = self.clone();
        for (o, &f) in out.outcomes.iter_mut().zip(fixed) {
            o.fixed_interval = f;
        }
        out.check()?;
        Ok(out)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| LbgmError::Config(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ModelSpec serializes")
    }
}

/// Growth-factor, rate and residual parameters of one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeParams {
    pub mu_eta0: f64,
    pub mu_eta1: f64,
    pub psi00: f64,
    pub psi01: f64,
    pub psi11: f64,
    /// Relative rate of each of the J−1 intervals; 1 at the fixed interval.
    pub gamma: Vec<f64>,
    pub theta_eps: f64,
}

/// Between-construct covariances. `psi01` pairs the first outcome's intercept with
/// the second outcome's shape factor; `psi10` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CrossParams {
    pub psi00: f64,
    pub psi01: f64,
    pub psi10: f64,
    pub psi11: f64,
    pub theta_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub outcomes: Vec<OutcomeParams>,
    /// Present for parallel models; `None` is equivalent to all zeros.
    pub cross: Option<CrossParams>,
}

impl ParameterSet {
    /// Growth-factor means ordered (η0, η1) per outcome.
    pub fn growth_means(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.outcomes.len(),
            self.outcomes.iter().flat_map(|o| [o.mu_eta0, o.mu_eta1]),
        )
    }

    /// Joint growth-factor covariance, ordered like [`growth_means`](Self::growth_means).
    pub fn growth_cov(&self) -> DMatrix<f64> {
        let k = self.outcomes.len();
        let mut psi = DMatrix::zeros(2 * k, 2 * k);
        for (u, o) in self.outcomes.iter().enumerate() {
            let b = 2 * u;
            psi[(b, b)] = o.psi00;
            psi[(b, b + 1)] = o.psi01;
            psi[(b + 1, b)] = o.psi01;
            psi[(b + 1, b + 1)] = o.psi11;
        }
        if k == 2 {
            let c = self.cross.unwrap_or_default();
            let cross = [[c.psi00, c.psi01], [c.psi10, c.psi11]];
            for a in 0..2 {
                for b in 0..2 {
                    psi[(a, 2 + b)] = cross[a][b];
                    psi[(2 + b, a)] = cross[a][b];
                }
            }
        }
        psi
    }

    /// Per-wave residual covariance across outcomes (1×1 or 2×2).
    pub fn residual_cov(&self) -> DMatrix<f64> {
        let k = self.outcomes.len();
        let mut r = DMatrix::zeros(k, k);
        for (u, o) in self.outcomes.iter().enumerate() {
            r[(u, u)] = o.theta_eps;
        }
        if k == 2 {
            let c = self.cross.map(|c| c.theta_eps).unwrap_or(0.0);
            r[(0, 1)] = c;
            r[(1, 0)] = c;
        }
        r
    }

    /// Check the structural invariants against a model spec.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.outcomes.len() != spec.outcomes.len() {
            return Err(LbgmError::Parameters(format!(
                "{} outcome blocks for a {}-outcome model",
                self.outcomes.len(),
                spec.outcomes.len()
            )));
        }
        for (o, s) in self.outcomes.iter().zip(&spec.outcomes) {
            if o.gamma.len() != s.waves - 1 {
                return Err(LbgmError::Parameters(format!(
                    "outcome `{}` has {} relative rates, expected {}",
                    s.label,
                    o.gamma.len(),
                    s.waves - 1
                )));
            }
            if o.gamma[s.fixed_interval - 1] != 1.0 {
                return Err(LbgmError::Parameters(format!(
                    "relative rate of fixed interval {} of `{}` must be 1",
                    s.fixed_interval, s.label
                )));
            }
            if !(o.theta_eps > 0.0) {
                return Err(LbgmError::Parameters(format!(
                    "residual variance of `{}` must be positive",
                    s.label
                )));
            }
        }
        if !is_psd(&self.growth_cov()) {
            return Err(LbgmError::Parameters(
                "growth-factor covariance is not positive semi-definite".into(),
            ));
        }
        if !is_psd(&self.residual_cov()) {
            return Err(LbgmError::Parameters(
                "residual covariance is not positive semi-definite".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.diagonal().amax().max(1.0);
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= -1e-10 * scale)
}

/// Overlap of each observed occasion's elapsed window `[baseline, t_j]` with each
/// of the J−1 model intervals.
///
/// Interval `k` (0-based) runs from wave `k+1` to wave `k+2`. Its endpoints are the
/// individual's own times where observed. A wave the individual skipped gets a
/// boundary linearly interpolated by wave index between the neighbouring observed
/// times. Intervals outside the individual's observed span contribute nothing.
pub fn interval_overlaps(
    times: &[f64],
    observed_waves: &[usize],
    waves: usize,
    baseline_time: f64,
) -> Result<DMatrix<f64>> {
    if times.is_empty() {
        return Err(LbgmError::Loading("no observed times".into()));
    }
    if times.len() != observed_waves.len() {
        return Err(LbgmError::Loading(format!(
            "{} times for {} wave indices",
            times.len(),
            observed_waves.len()
        )));
    }
    if waves < 2 {
        return Err(LbgmError::Loading("need at least two waves".into()));
    }
    for w in observed_waves.windows(2) {
        if w[1] <= w[0] {
            return Err(LbgmError::Loading("wave indices not increasing".into()));
        }
    }
    for t in times.windows(2) {
        if !(t[1] > t[0]) {
            return Err(LbgmError::Loading("times not strictly increasing".into()));
        }
    }
    if observed_waves[0] < 1 || *observed_waves.last().unwrap() > waves {
        return Err(LbgmError::Loading(format!("wave index outside 1..={waves}")));
    }
    if !(baseline_time >= times[0]) {
        return Err(LbgmError::Loading(
            "baseline time precedes the first observed time".into(),
        ));
    }

    // Boundary time for every wave between the first and last observed wave.
    let first = observed_waves[0];
    let last = *observed_waves.last().unwrap();
    let mut boundary = vec![f64::NAN; waves + 1];
    for (&w, &t) in observed_waves.iter().zip(times) {
        boundary[w] = t;
    }
    for pair in observed_waves.windows(2) {
        let (wa, wb) = (pair[0], pair[1]);
        let (ta, tb) = (boundary[wa], boundary[wb]);
        for w in wa + 1..wb {
            boundary[w] = ta + (tb - ta) * (w - wa) as f64 / (wb - wa) as f64;
        }
    }

    let mut overlaps = DMatrix::zeros(times.len(), waves - 1);
    for (row, &t) in times.iter().enumerate() {
        for k in first..last {
            let lo = boundary[k].max(baseline_time);
            let hi = boundary[k + 1].min(t);
            if hi > lo {
                overlaps[(row, k - 1)] = hi - lo;
            }
        }
    }
    Ok(overlaps)
}

/// Loading matrix with rows `(1, L_j)` for one outcome of one individual.
pub fn build_loading_matrix(
    times: &[f64],
    gammas: &[f64],
    observed_waves: &[usize],
    waves: usize,
    baseline_time: f64,
) -> Result<DMatrix<f64>> {
    if gammas.len() + 1 != waves {
        return Err(LbgmError::Loading(format!(
            "{} relative rates for {} waves",
            gammas.len(),
            waves
        )));
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(LbgmError::Loading("non-finite relative rate".into()));
    }
    let overlaps = interval_overlaps(times, observed_waves, waves, baseline_time)?;
    let shape = &overlaps * DVector::from_column_slice(gammas);
    let mut lambda = DMatrix::from_element(times.len(), 2, 1.0);
    lambda.set_column(1, &shape);
    Ok(lambda)
}

/// Model-implied moments of one individual's observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `(outcome index, wave)` of every entry, outcomes stacked in spec order.
    pub entry_index: Vec<(usize, usize)>,
}

/// Parameter-independent pieces of one individual's likelihood contribution.
#[derive(Debug, Clone)]
pub struct IndividualDesign {
    pub id: String,
    pub entry_index: Vec<(usize, usize)>,
    pub values: DVector<f64>,
    /// Per outcome: first stacked row and the occasion × interval overlap matrix.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    /// Pairs of stacked rows that share a wave across the two outcomes.
    pub wave_pairs: Vec<(usize, usize)>,
}

fn find_series<'a>(individual: &'a Individual, label: &str) -> Result<&'a OutcomeSeries> {
    individual
        .series
        .iter()
        .find(|s| s.label == label)
        .ok_or_else(|| LbgmError::UnknownOutcome(label.to_string()))
}

impl IndividualDesign {
    pub fn new(spec: &ModelSpec, individual: &Individual) -> Result<Self> {
        let mut entry_index = Vec::new();
        let mut values = Vec::new();
        let mut blocks = Vec::with_capacity(spec.outcomes.len());
        for (u, o) in spec.outcomes.iter().enumerate() {
            let series = find_series(individual, &o.label)?;
            let times = series.times();
            let waves = series.wave_indices();
            let baseline = *times
                .first()
                .ok_or_else(|| LbgmError::Loading(format!("no observations of `{}`", o.label)))?;
            let overlaps = interval_overlaps(&times, &waves, o.waves, baseline)?;
            blocks.push((entry_index.len(), overlaps));
            for obs in &series.observations {
                entry_index.push((u, obs.wave));
                values.push(obs.value);
            }
        }
        let mut wave_pairs = Vec::new();
        if spec.outcomes.len() == 2 {
            for (a, &(ua, wa)) in entry_index.iter().enumerate() {
                if ua != 0 {
                    continue;
                }
                if let Some(b) = entry_index.iter().position(|&(ub, wb)| ub == 1 && wb == wa) {
                    wave_pairs.push((a, b));
                }
            }
        }
        Ok(Self {
            id: individual.id.clone(),
            entry_index,
            values: DVector::from_vec(values),
            blocks,
            wave_pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.entry_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_index.is_empty()
    }

    /// Stacked block-diagonal loading matrix (entries × 2·outcomes).
    pub fn loadings(&self, params: &ParameterSet) -> DMatrix<f64> {
        let k = self.blocks.len();
        let mut lambda = DMatrix::zeros(self.len(), 2 * k);
        for (u, (start, overlaps)) in self.blocks.iter().enumerate() {
            let gamma = &params.outcomes[u].gamma;
            for r in 0..overlaps.nrows() {
                let mut l = 0.0;
                for (c, g) in gamma.iter().enumerate() {
                    l += overlaps[(r, c)] * g;
                }
                lambda[(start + r, 2 * u)] = 1.0;
                lambda[(start + r, 2 * u + 1)] = l;
            }
        }
        lambda
    }

    pub fn moments_with(&self, params: &ParameterSet, lambda: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mean = lambda * params.growth_means();
        let psi = params.growth_cov();
        let mut cov = lambda * psi * lambda.transpose();
        cov.fill_upper_triangle_with_lower_triangle();
        let residual = params.residual_cov();
        for (e, &(u, _)) in self.entry_index.iter().enumerate() {
            cov[(e, e)] += residual[(u, u)];
        }
        if residual.nrows() == 2 {
            for &(a, b) in &self.wave_pairs {
                cov[(a, b)] += residual[(0, 1)];
                cov[(b, a)] += residual[(0, 1)];
            }
        }
        (mean, cov)
    }

    pub fn moments(&self, params: &ParameterSet) -> ImpliedMoments {
        let lambda = self.loadings(params);
        let (mean, covariance) = self.moments_with(params, &lambda);
        ImpliedMoments {
            mean,
            covariance,
            entry_index: self.entry_index.clone(),
        }
    }
}

/// Implied mean vector and covariance matrix over an individual's observed entries.
pub fn implied_moments(
    spec: &ModelSpec,
    params: &ParameterSet,
    individual: &Individual,
) -> Result<ImpliedMoments> {
    if params.outcomes.len() != spec.outcomes.len() {
        return Err(LbgmError::Parameters("parameter set does not match spec".into()));
    }
    for (o, s) in params.outcomes.iter().zip(&spec.outcomes) {
        if o.gamma.len() + 1 != s.waves {
            return Err(LbgmError::Loading(format!(
                "{} relative rates for {} waves",
                o.gamma.len(),
                s.waves
            )));
        }
    }
    Ok(IndividualDesign::new(spec, individual)?.moments(params))
}

/// Re-express parameters with the shape factors scaled to different intervals.
///
/// With `c = gamma_old[new_fixed]`, the new shape factor is `c·η1` and the new
/// rates are `gamma_old / c`, so every implied moment is unchanged.
pub fn rescale_parameters(
    params: &ParameterSet,
    spec_from: &ModelSpec,
    spec_to: &ModelSpec,
) -> Result<ParameterSet> {
    if spec_from.outcomes.len() != spec_to.outcomes.len()
        || params.outcomes.len() != spec_from.outcomes.len()
    {
        return Err(LbgmError::Spec("specs differ in outcome count".into()));
    }
    for (a, b) in spec_from.outcomes.iter().zip(&spec_to.outcomes) {
        if a.label != b.label || a.waves != b.waves {
            return Err(LbgmError::Spec(
                "specs may differ only in their fixed intervals".into(),
            ));
        }
    }
    let mut scale = Vec::with_capacity(params.outcomes.len());
    let mut out = params.clone();
    for (o, to) in out.outcomes.iter_mut().zip(&spec_to.outcomes) {
        let c = o.gamma[to.fixed_interval - 1];
        if c == 0.0 || !c.is_finite() {
            return Err(LbgmError::DegenerateScaling {
                interval: to.fixed_interval,
            });
        }
        for g in o.gamma.iter_mut() {
            *g /= c;
        }
        o.gamma[to.fixed_interval - 1] = 1.0;
        o.mu_eta1 *= c;
        o.psi01 *= c;
        o.psi11 *= c * c;
        scale.push(c);
    }
    if let Some(cross) = out.cross.as_mut() {
        let (cy, cz) = (scale[0], scale[1]);
        cross.psi01 *= cz;
        cross.psi10 *= cy;
        cross.psi11 *= cy * cz;
    }
    Ok(out)
}
