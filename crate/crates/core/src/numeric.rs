//! Small numeric utilities shared across modules.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

/// Correctly rounded floating-point accumulator (Shewchuk's algorithm).
///
/// The result does not depend on the order in which terms are added, so sums over
/// individuals are bitwise invariant under permutation and exactly doubled when
/// every term is duplicated.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.partials.push(x);
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if !y.is_finite() {
                self.partials[i] = y;
                i += 1;
                continue;
            }
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        if p.iter().any(|v| !v.is_finite()) {
            return p.iter().sum();
        }
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction across the remaining partials.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

pub fn fsum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = ExactSum::new();
    for x in iter {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    fsum(xs.iter().copied()) / xs.len() as f64
}

/// Sample variance with divisor n−1 (0 for fewer than two values).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    fsum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    fsum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my))) / (xs.len() - 1) as f64
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided p-value of a Wald z statistic.
pub fn two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    2.0 * std_normal().sf(z.abs())
}

/// Smallest eigenvalue of the correlation matrix built from a covariance matrix.
/// Returns 0 when a diagonal entry is not positive.
pub fn min_correlation_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    let mut corr = cov.clone();
    for i in 0..n {
        if !(cov[(i, i)] > 0.0) {
            return 0.0;
        }
    }
    for i in 0..n {
        for j in 0..n {
            corr[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
        }
    }
    corr.symmetric_eigenvalues().min()
}
