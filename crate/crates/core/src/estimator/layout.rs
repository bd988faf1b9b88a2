//! Mapping between a [`ParameterSet`] and the flat vector of free parameters.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::data::LongitudinalSample;
use crate::error::{LbgmError, Result};
use crate::model::{CrossParams, ModelSpec, ParameterSet};

/// Which relative rates are free, tied, or not identified for one outcome.
///
/// Intervals between two consecutive waves that are observed somewhere in the
/// sample form one group with a single shared rate. Intervals before the first or
/// after the last observed wave never enter a loading and are inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStructure {
    /// 0-based interval indices, one entry per rate group.
    pub groups: Vec<Vec<usize>>,
    pub fixed_group: usize,
    pub inactive: Vec<usize>,
}

impl RateStructure {
    pub fn from_observed(
        observed: &BTreeSet<usize>,
        waves: usize,
        fixed_interval: usize,
        label: &str,
    ) -> Result<Self> {
        let obs: Vec<usize> = observed.iter().copied().filter(|&w| w >= 1 && w <= waves).collect();
        if obs.len() < 2 {
            return Err(LbgmError::FixedIntervalUnobservable {
                outcome: label.into(),
                interval: fixed_interval,
            });
        }
        let groups: Vec<Vec<usize>> = obs
            .windows(2)
            .map(|w| (w[0] - 1..w[1] - 1).collect())
            .collect();
        let fixed = fixed_interval - 1;
        let fixed_group = groups
            .iter()
            .position(|g| g.contains(&fixed))
            .ok_or_else(|| LbgmError::FixedIntervalUnobservable {
                outcome: label.into(),
                interval: fixed_interval,
            })?;
        let inactive = (0..waves - 1)
            .filter(|k| !groups.iter().any(|g| g.contains(k)))
            .collect();
        Ok(Self {
            groups,
            fixed_group,
            inactive,
        })
    }

    /// Every interval active and separately estimated.
    pub fn complete(waves: usize, fixed_interval: usize) -> Self {
        Self {
            groups: (0..waves - 1).map(|k| vec![k]).collect(),
            fixed_group: fixed_interval - 1,
            inactive: Vec::new(),
        }
    }

    pub fn group_of(&self, interval: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&interval))
    }

    pub fn is_active(&self, interval: usize) -> bool {
        self.group_of(interval).is_some()
    }

    pub fn free_groups(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.groups.len()).filter(move |&g| g != self.fixed_group)
    }

    pub fn group_name(&self, group: usize) -> String {
        let g = &self.groups[group];
        if g.len() == 1 {
            format!("gamma{}", g[0] + 1)
        } else {
            format!("gamma{}-{}", g[0] + 1, g[g.len() - 1] + 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossKind {
    Psi00,
    Psi01,
    Psi10,
    Psi11,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Mu0(usize),
    Mu1(usize),
    Psi00(usize),
    Psi01(usize),
    Psi11(usize),
    Gamma { outcome: usize, group: usize },
    Theta(usize),
    Cross(CrossKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Mean,
    Variance,
    Covariance,
    Rate,
    Residual,
}

impl Slot {
    pub fn class(&self) -> ParamClass {
        match self {
            Slot::Mu0(_) | Slot::Mu1(_) => ParamClass::Mean,
            Slot::Psi00(_) | Slot::Psi11(_) => ParamClass::Variance,
            Slot::Psi01(_) => ParamClass::Covariance,
            Slot::Cross(CrossKind::Theta) => ParamClass::Residual,
            Slot::Cross(_) => ParamClass::Covariance,
            Slot::Gamma { .. } => ParamClass::Rate,
            Slot::Theta(_) => ParamClass::Residual,
        }
    }
}

/// Ordered list of the free natural parameters of a model fitted to a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub slots: Vec<Slot>,
    pub names: Vec<String>,
    pub rates: Vec<RateStructure>,
    pub has_cross: bool,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, rates: Vec<RateStructure>) -> Self {
        let mut slots = Vec::new();
        let mut names = Vec::new();
        for (u, o) in spec.outcomes.iter().enumerate() {
            let l = &o.label;
            let mut push = |slot, name: String| {
                slots.push(slot);
                names.push(format!("{l}.{name}"));
            };
            push(Slot::Mu0(u), "mu_eta0".into());
            push(Slot::Mu1(u), "mu_eta1".into());
            push(Slot::Psi00(u), "psi00".into());
            push(Slot::Psi01(u), "psi01".into());
            push(Slot::Psi11(u), "psi11".into());
            for g in rates[u].free_groups() {
                push(Slot::Gamma { outcome: u, group: g }, rates[u].group_name(g));
            }
            push(Slot::Theta(u), "theta_eps".into());
        }
        let has_cross = spec.has_cross();
        if has_cross {
            for (kind, name) in [
                (CrossKind::Psi00, "psi00"),
                (CrossKind::Psi01, "psi01"),
                (CrossKind::Psi10, "psi10"),
                (CrossKind::Psi11, "psi11"),
                (CrossKind::Theta, "theta_eps"),
            ] {
                slots.push(Slot::Cross(kind));
                names.push(format!("cross.{name}"));
            }
        }
        Self {
            slots,
            names,
            rates,
            has_cross,
        }
    }

    /// Layout with rate groups derived from the waves observed in `sample`.
    pub fn for_sample(spec: &ModelSpec, sample: &LongitudinalSample) -> Result<Self> {
        let rates = spec
            .outcomes
            .iter()
            .map(|o| {
                let k = sample
                    .outcome_index(&o.label)
                    .ok_or_else(|| LbgmError::UnknownOutcome(o.label.clone()))?;
                RateStructure::from_observed(&sample.observed_waves(k), o.waves, o.fixed_interval, &o.label)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(spec, rates))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index_of(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().position(|&s| s == slot)
    }

    pub fn index_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Index of the free parameter carrying interval `k` (0-based) of `outcome`.
    pub fn gamma_index(&self, outcome: usize, interval: usize) -> Option<usize> {
        let group = self.rates[outcome].group_of(interval)?;
        self.index_of(Slot::Gamma { outcome, group })
    }

    pub fn get(&self, params: &ParameterSet, slot: Slot) -> f64 {
        let cross = params.cross.unwrap_or_default();
        match slot {
            Slot::Mu0(u) => params.outcomes[u].mu_eta0,
            Slot::Mu1(u) => params.outcomes[u].mu_eta1,
            Slot::Psi00(u) => params.outcomes[u].psi00,
            Slot::Psi01(u) => params.outcomes[u].psi01,
            Slot::Psi11(u) => params.outcomes[u].psi11,
            Slot::Gamma { outcome, group } => {
                params.outcomes[outcome].gamma[self.rates[outcome].groups[group][0]]
            }
            Slot::Theta(u) => params.outcomes[u].theta_eps,
            Slot::Cross(CrossKind::Psi00) => cross.psi00,
            Slot::Cross(CrossKind::Psi01) => cross.psi01,
            Slot::Cross(CrossKind::Psi10) => cross.psi10,
            Slot::Cross(CrossKind::Psi11) => cross.psi11,
            Slot::Cross(CrossKind::Theta) => cross.theta_eps,
        }
    }

    pub fn vector(&self, params: &ParameterSet) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.slots.iter().map(|&s| self.get(params, s)))
    }

    /// Write `values` into a copy of `template`. Tied rates are set together and
    /// the fixed group is pinned at 1.
    pub fn apply(&self, values: &DVector<f64>, template: &ParameterSet) -> ParameterSet {
        let mut p = template.clone();
        if self.has_cross && p.cross.is_none() {
            p.cross = Some(CrossParams::default());
        }
        for (&slot, &v) in self.slots.iter().zip(values.iter()) {
            match slot {
                Slot::Mu0(u) => p.outcomes[u].mu_eta0 = v,
                Slot::Mu1(u) => p.outcomes[u].mu_eta1 = v,
                Slot::Psi00(u) => p.outcomes[u].psi00 = v,
                Slot::Psi01(u) => p.outcomes[u].psi01 = v,
                Slot::Psi11(u) => p.outcomes[u].psi11 = v,
                Slot::Gamma { outcome, group } => {
                    for &k in &self.rates[outcome].groups[group] {
                        p.outcomes[outcome].gamma[k] = v;
                    }
                }
                Slot::Theta(u) => p.outcomes[u].theta_eps = v,
                Slot::Cross(kind) => {
                    let c = p.cross.as_mut().expect("cross block present");
                    match kind {
                        CrossKind::Psi00 => c.psi00 = v,
                        CrossKind::Psi01 => c.psi01 = v,
                        CrossKind::Psi10 => c.psi10 = v,
                        CrossKind::Psi11 => c.psi11 = v,
                        CrossKind::Theta => c.theta_eps = v,
                    }
                }
            }
        }
        self.pin_fixed(&mut p);
        p
    }

    pub(crate) fn pin_fixed(&self, p: &mut ParameterSet) {
        for (u, rs) in self.rates.iter().enumerate() {
            for &k in &rs.groups[rs.fixed_group] {
                p.outcomes[u].gamma[k] = 1.0;
            }
        }
    }
}
