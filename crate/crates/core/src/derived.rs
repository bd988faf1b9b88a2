//! Interval-level quantities derived from a fitted model, with delta-method SEs.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{LbgmError, Result};
use crate::estimator::{CrossKind, FitResult, Slot};
use crate::numeric::two_sided_p;

/// A derived point estimate with its first-order delta-method SE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedValue {
    pub estimate: f64,
    pub se: Option<f64>,
    pub pvalue: Option<f64>,
}

impl DerivedValue {
    /// `se = √(∇gᵀ V ∇g)`; `None` without a covariance matrix.
    pub fn from_gradient(estimate: f64, gradient: &DVector<f64>, vcov: Option<&DMatrix<f64>>) -> Self {
        let se = vcov
            .map(|v| gradient.dot(&(v * gradient)))
            .and_then(|var| (var >= 0.0).then(|| var.sqrt()));
        Self {
            estimate,
            se,
            pvalue: se.and_then(|s| (s > 0.0).then(|| two_sided_p(estimate / s))),
        }
    }

    pub fn exact(estimate: f64) -> Self {
        Self {
            estimate,
            se: Some(0.0),
            pvalue: None,
        }
    }
}

/// Absolute rate moments of one interval of one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMoments {
    /// 1-based interval.
    pub interval: usize,
    pub mean: DerivedValue,
    pub var: DerivedValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossRate {
    pub interval: usize,
    pub cov: DerivedValue,
    /// Correlation from this interval's moments; identical across intervals.
    pub corr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteRates {
    /// Per outcome in spec order, active intervals only.
    pub outcomes: Vec<Vec<RateMoments>>,
    /// Intervals active for both outcomes of a parallel model.
    pub cross: Vec<CrossRate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlations {
    pub intercept: DerivedValue,
    pub rate: DerivedValue,
}

fn require_vcov(fit: &FitResult) -> Result<&DMatrix<f64>> {
    fit.vcov.as_ref().ok_or(LbgmError::VcovUnavailable)
}

struct Params<'a> {
    fit: &'a FitResult,
}

impl Params<'_> {
    fn idx(&self, slot: Slot) -> Option<usize> {
        self.fit.layout.index_of(slot)
    }

    fn value(&self, slot: Slot) -> f64 {
        self.fit.layout.get(&self.fit.estimates, slot)
    }

    fn zeros(&self) -> DVector<f64> {
        DVector::zeros(self.fit.layout.len())
    }

    /// Relative rate of an interval and the index of its free parameter, if any.
    fn gamma(&self, outcome: usize, interval: usize) -> (f64, Option<usize>) {
        (
            self.fit.estimates.outcomes[outcome].gamma[interval],
            self.fit.layout.gamma_index(outcome, interval),
        )
    }
}

/// Mean `μ_η1·γ_k`, variance `ψ11·γ_k²` and cross-outcome covariance
/// `ψ11^{yz}·γ_k^y·γ_k^z` of the absolute rate in every active interval.
pub fn absolute_rate_moments(fit: &FitResult) -> Result<AbsoluteRates> {
    require_vcov(fit)?;
    Ok(rate_moments(fit))
}

/// As [`absolute_rate_moments`], leaving SEs unavailable without a covariance matrix.
fn rate_moments(fit: &FitResult) -> AbsoluteRates {
    let vcov = fit.vcov.as_ref();
    let p = Params { fit };
    let rates = &fit.layout.rates;
    let mut outcomes = Vec::new();
    for (u, rs) in rates.iter().enumerate() {
        let mu1 = p.value(Slot::Mu1(u));
        let psi11 = p.value(Slot::Psi11(u));
        let mut rows = Vec::new();
        for k in (0..fit.spec.outcomes[u].waves - 1).filter(|&k| rs.is_active(k)) {
            let (g, gi) = p.gamma(u, k);
            let mut dm = p.zeros();
            dm[p.idx(Slot::Mu1(u)).unwrap()] = g;
            let mut dv = p.zeros();
            dv[p.idx(Slot::Psi11(u)).unwrap()] = g * g;
            if let Some(i) = gi {
                dm[i] = mu1;
                dv[i] = 2.0 * psi11 * g;
            }
            rows.push(RateMoments {
                interval: k + 1,
                mean: DerivedValue::from_gradient(mu1 * g, &dm, vcov),
                var: DerivedValue::from_gradient(psi11 * g * g, &dv, vcov),
            });
        }
        outcomes.push(rows);
    }

    let mut cross = Vec::new();
    if fit.layout.has_cross {
        let c = p.value(Slot::Cross(CrossKind::Psi11));
        let ci = p.idx(Slot::Cross(CrossKind::Psi11)).unwrap();
        let (vy, vz) = (p.value(Slot::Psi11(0)), p.value(Slot::Psi11(1)));
        let j = fit.spec.outcomes[0].waves.min(fit.spec.outcomes[1].waves);
        for k in (0..j - 1).filter(|&k| rates[0].is_active(k) && rates[1].is_active(k)) {
            let (gy, gyi) = p.gamma(0, k);
            let (gz, gzi) = p.gamma(1, k);
            let mut d = p.zeros();
            d[ci] = gy * gz;
            if let Some(i) = gyi {
                d[i] += c * gz;
            }
            if let Some(i) = gzi {
                d[i] += c * gy;
            }
            let cov = c * gy * gz;
            let corr = cov / ((vy * gy * gy) * (vz * gz * gz)).sqrt();
            cross.push(CrossRate {
                interval: k + 1,
                cov: DerivedValue::from_gradient(cov, &d, vcov),
                corr,
            });
        }
    }
    AbsoluteRates { outcomes, cross }
}

fn correlation(p: &Params, cov: Slot, a: Slot, b: Slot) -> Result<DerivedValue> {
    let (c, va, vb) = (p.value(cov), p.value(a), p.value(b));
    if !(va > 0.0 && vb > 0.0) {
        return Err(LbgmError::Derived("zero variance component".into()));
    }
    let r = c / (va * vb).sqrt();
    let mut d = p.zeros();
    d[p.idx(cov).unwrap()] = 1.0 / (va * vb).sqrt();
    d[p.idx(a).unwrap()] = -0.5 * r / va;
    d[p.idx(b).unwrap()] = -0.5 * r / vb;
    Ok(DerivedValue::from_gradient(r, &d, p.fit.vcov.as_ref()))
}

/// Between-outcome intercept correlation and the (interval-free) rate correlation.
pub fn standardized_correlations(fit: &FitResult) -> Result<Correlations> {
    if !fit.layout.has_cross {
        return Err(LbgmError::Derived("model has no between-outcome covariances".into()));
    }
    let p = Params { fit };
    Ok(Correlations {
        intercept: correlation(&p, Slot::Cross(CrossKind::Psi00), Slot::Psi00(0), Slot::Psi00(1))?,
        rate: correlation(&p, Slot::Cross(CrossKind::Psi11), Slot::Psi11(0), Slot::Psi11(1))?,
    })
}

/// Wave times with gaps filled by linear interpolation (or extrapolation at the
/// ends) in wave index.
pub fn fill_wave_times(times: &[Option<f64>]) -> Result<Vec<f64>> {
    let known: Vec<(usize, f64)> = times.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t))).collect();
    if known.len() < 2 {
        return Err(LbgmError::Derived("fewer than two observed wave times".into()));
    }
    let line = |a: (usize, f64), b: (usize, f64), i: usize| {
        a.1 + (b.1 - a.1) * (i as f64 - a.0 as f64) / (b.0 as f64 - a.0 as f64)
    };
    Ok((0..times.len())
        .map(|i| {
            if let Some(t) = times[i] {
                return t;
            }
            let pos = known.partition_point(|&(w, _)| w < i);
            let (a, b) = if pos == 0 {
                (known[0], known[1])
            } else if pos == known.len() {
                (known[pos - 2], known[pos - 1])
            } else {
                (known[pos - 1], known[pos])
            };
            line(a, b, i)
        })
        .collect())
}

/// Model-implied mean change since the outcome's first modelled wave,
/// `μ_η1·Σ γ_k (t_{k+1} − t_k)`, at each wave of `wave_times`. Waves before the
/// first or after the last modelled wave are `None`.
pub fn change_from_baseline(fit: &FitResult, outcome: usize, wave_times: &[f64]) -> Result<Vec<Option<DerivedValue>>> {
    let waves = fit.spec.outcomes[outcome].waves;
    if wave_times.len() != waves {
        return Err(LbgmError::Derived(format!(
            "{} reference times for {} waves",
            wave_times.len(),
            waves
        )));
    }
    if wave_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LbgmError::Derived("reference times are not increasing".into()));
    }
    let p = Params { fit };
    let rs = &fit.layout.rates[outcome];
    let first = rs.groups[0][0];
    let last = *rs.groups.last().unwrap().last().unwrap() + 1;
    let mu1 = p.value(Slot::Mu1(outcome));
    let mu1_index = p.idx(Slot::Mu1(outcome)).unwrap();

    let mut out = vec![None; waves];
    out[first] = Some(DerivedValue::exact(0.0));
    let mut area = 0.0;
    let mut d = p.zeros();
    for k in first..last {
        let len = wave_times[k + 1] - wave_times[k];
        let (g, gi) = p.gamma(outcome, k);
        area += g * len;
        if let Some(i) = gi {
            d[i] += mu1 * len;
        }
        d[mu1_index] = area;
        out[k + 1] = Some(DerivedValue::from_gradient(mu1 * area, &d, fit.vcov.as_ref()));
    }
    Ok(out)
}

/// Reference times for an outcome: per-wave means of the observed times.
pub fn reference_times(fit: &FitResult, outcome: usize) -> Result<Vec<f64>> {
    fill_wave_times(&fit.reference_times[outcome])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub panel: String,
    pub quantity: String,
    /// One cell per outcome, then the between-outcome cell for parallel models.
    pub cells: Vec<Option<DerivedValue>>,
}

/// Table of fitted and derived quantities grouped into panels: `Mean` (initial
/// status and absolute interval rates), `Variance` (the same, with between-outcome
/// covariances), `Correlation` and `Change`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedReport {
    pub outcomes: Vec<String>,
    pub has_cross: bool,
    pub rows: Vec<ReportRow>,
}

fn raw(fit: &FitResult, slot: Slot) -> DerivedValue {
    let p = Params { fit };
    let mut d = p.zeros();
    if let Some(i) = p.idx(slot) {
        d[i] = 1.0;
    }
    DerivedValue::from_gradient(p.value(slot), &d, fit.vcov.as_ref())
}

impl DerivedReport {
    pub fn from_fit(fit: &FitResult) -> Result<Self> {
        let k = fit.spec.outcomes.len();
        let has_cross = fit.layout.has_cross;
        let width = k + usize::from(has_cross);
        let rates = rate_moments(fit);
        let max_waves = fit.spec.outcomes.iter().map(|o| o.waves).max().unwrap();
        let mut rows = Vec::new();
        let row = |panel: &str, quantity: String, cells: Vec<Option<DerivedValue>>| ReportRow {
            panel: panel.into(),
            quantity,
            cells,
        };
        let rate_of = |u: usize, interval: usize| rates.outcomes[u].iter().find(|r| r.interval == interval);
        let cross_of = |interval: usize| rates.cross.iter().find(|r| r.interval == interval);

        let mut cells = (0..k).map(|u| Some(raw(fit, Slot::Mu0(u)))).collect::<Vec<_>>();
        cells.resize(width, None);
        rows.push(row("Mean", "Initial Status".into(), cells));
        for interval in 1..max_waves {
            let mut cells: Vec<_> = (0..k).map(|u| rate_of(u, interval).map(|r| r.mean)).collect();
            cells.resize(width, None);
            rows.push(row("Mean", format!("Rate of Interval {interval}"), cells));
        }

        let mut cells: Vec<_> = (0..k).map(|u| Some(raw(fit, Slot::Psi00(u)))).collect();
        if has_cross {
            cells.push(Some(raw(fit, Slot::Cross(CrossKind::Psi00))));
        }
        rows.push(row("Variance", "Initial Status".into(), cells));
        for interval in 1..max_waves {
            let mut cells: Vec<_> = (0..k).map(|u| rate_of(u, interval).map(|r| r.var)).collect();
            if has_cross {
                cells.push(cross_of(interval).map(|c| c.cov));
            }
            rows.push(row("Variance", format!("Rate of Interval {interval}"), cells));
        }

        if has_cross {
            if let Ok(corr) = standardized_correlations(fit) {
                let mut pad = vec![None; k];
                pad.push(Some(corr.intercept));
                rows.push(row("Correlation", "Initial Status".into(), pad));
                for interval in 1..max_waves {
                    let mut cells = vec![None; k];
                    cells.push(cross_of(interval).map(|c| DerivedValue {
                        estimate: c.corr,
                        ..corr.rate
                    }));
                    rows.push(row("Correlation", format!("Rate of Interval {interval}"), cells));
                }
            }
        }

        let changes = (0..k)
            .map(|u| change_from_baseline(fit, u, &reference_times(fit, u)?))
            .collect::<Result<Vec<_>>>()?;
        for wave in 1..=max_waves {
            let mut cells: Vec<_> = changes.iter().map(|c| c.get(wave - 1).copied().flatten()).collect();
            cells.resize(width, None);
            rows.push(row("Change", format!("Wave {wave}"), cells));
        }

        Ok(Self {
            outcomes: fit.spec.outcomes.iter().map(|o| o.label.clone()).collect(),
            has_cross,
            rows,
        })
    }

    fn columns(&self) -> Vec<String> {
        let mut groups = self.outcomes.clone();
        if self.has_cross {
            groups.push("cov".into());
        }
        groups
    }

    pub fn find(&self, panel: &str, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.panel == panel && r.quantity == quantity)
    }

    /// `panel,quantity` then `<col>_estimate,<col>_se,<col>_pvalue` per outcome and,
    /// for parallel models, a `cov` group. Unavailable cells are `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["panel".to_string(), "quantity".to_string()];
        for c in self.columns() {
            header.extend([format!("{c}_estimate"), format!("{c}_se"), format!("{c}_pvalue")]);
        }
        wtr.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            let mut rec = vec![r.panel.clone(), r.quantity.clone()];
            for c in &r.cells {
                rec.push(fmt(c.map(|c| c.estimate)));
                rec.push(fmt(c.and_then(|c| c.se)));
                rec.push(fmt(c.and_then(|c| c.pvalue)));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let groups: Vec<String> = header
            .iter()
            .skip(2)
            .step_by(3)
            .map(|h| h.trim_end_matches("_estimate").to_string())
            .collect();
        if header.len() < 5 || (header.len() - 2) % 3 != 0 || groups.is_empty() {
            return Err(LbgmError::Derived("unrecognized derived report header".into()));
        }
        let has_cross = groups.last().map(|g| g == "cov").unwrap_or(false);
        let outcomes = groups[..groups.len() - usize::from(has_cross)].to_vec();
        let parse = |s: &str| s.parse::<f64>().ok().filter(|v| !v.is_nan());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let cells = (0..groups.len())
                .map(|g| {
                    let at = |j: usize| rec.get(2 + 3 * g + j).and_then(parse);
                    at(0).map(|estimate| DerivedValue {
                        estimate,
                        se: at(1),
                        pvalue: at(2),
                    })
                })
                .collect();
            rows.push(ReportRow {
                panel: rec.get(0).unwrap_or("").to_string(),
                quantity: rec.get(1).unwrap_or("").to_string(),
                cells,
            });
        }
        Ok(Self {
            outcomes,
            has_cross,
            rows,
        })
    }
}
