//! Finite-difference derivatives.
//!
//! Steps are `h_i = max(1e-5, 1e-5·|x_i|)`. The Hessian is built from central
//! differences of a gradient and symmetrized as `(H + Hᵀ)/2`.

use nalgebra::{DMatrix, DVector};

use super::deviance::Objective;
use super::layout::ParamLayout;
use crate::data::LongitudinalSample;
use crate::error::{LbgmError, Result};
use crate::model::{ModelSpec, ParameterSet};

pub fn step_size(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-5)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = step_size(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp).filter(|v| v.is_finite());
        xp[i] = x[i] - h;
        let fm = f(&xp).filter(|v| v.is_finite());
        xp[i] = x[i];
        match (fp, fm) {
            (Some(fp), Some(fm)) => g[i] = (fp - fm) / (2.0 * h),
            _ => return Err(LbgmError::NonFiniteStencil { index: i }),
        }
    }
    Ok(g)
}

/// Forward-difference gradient with step `factor · step_size(x_i)`.
pub fn forward_gradient<F>(f: F, x: &DVector<f64>, factor: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let f0 = f(x).filter(|v| v.is_finite()).ok_or(LbgmError::NonFiniteStencil { index: 0 })?;
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = factor * step_size(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp)
            .filter(|v| v.is_finite())
            .ok_or(LbgmError::NonFiniteStencil { index: i })?;
        xp[i] = x[i];
        g[i] = (fp - f0) / h;
    }
    Ok(g)
}

/// Symmetrized central-difference Jacobian of a gradient function.
pub fn hessian_from_gradient<G>(grad: G, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    G: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        let step = step_size(x[i]);
        xp[i] = x[i] + step;
        let gp = grad(&xp).filter(|g| g.iter().all(|v| v.is_finite()));
        xp[i] = x[i] - step;
        let gm = grad(&xp).filter(|g| g.iter().all(|v| v.is_finite()));
        xp[i] = x[i];
        let (gp, gm) = match (gp, gm) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(LbgmError::NonFiniteStencil { index: i }),
        };
        h.set_column(i, &((gp - gm) / (2.0 * step)));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Deviance as a function of the free natural parameters.
pub(crate) fn natural_deviance<'a>(
    objective: &'a Objective,
    layout: &'a ParamLayout,
    template: &'a ParameterSet,
) -> impl Fn(&DVector<f64>) -> Option<f64> + 'a {
    move |theta| objective.deviance(&layout.apply(theta, template)).ok()
}

/// Analytic deviance gradient as a function of the free natural parameters.
pub(crate) fn natural_gradient<'a>(
    objective: &'a Objective,
    layout: &'a ParamLayout,
    template: &'a ParameterSet,
) -> impl Fn(&DVector<f64>) -> Option<DVector<f64>> + 'a {
    move |theta| {
        objective
            .deviance_and_gradient(&layout.apply(theta, template))
            .ok()
            .map(|(_, g)| g.to_vector(layout))
    }
}

/// Central-difference gradient of the deviance over the free natural parameters,
/// ordered as [`ParamLayout::for_sample`].
pub fn numeric_gradient(
    params: &ParameterSet,
    spec: &ModelSpec,
    sample: &LongitudinalSample,
) -> Result<DVector<f64>> {
    let layout = ParamLayout::for_sample(spec, sample)?;
    let objective = Objective::new(spec, sample)?;
    central_gradient(natural_deviance(&objective, &layout, params), &layout.vector(params))
}

/// Finite-difference Hessian of the deviance over the free natural parameters.
pub fn numeric_hessian(
    params: &ParameterSet,
    spec: &ModelSpec,
    sample: &LongitudinalSample,
) -> Result<DMatrix<f64>> {
    let layout = ParamLayout::for_sample(spec, sample)?;
    let objective = Objective::new(spec, sample)?;
    hessian_from_gradient(natural_gradient(&objective, &layout, params), &layout.vector(params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &DVector<f64>) -> Option<f64> {
        Some(3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] - 5.0 * x[1] * x[1] + 7.0 * x[1] + 1.0)
    }

    fn quad_grad(x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![6.0 * x[0] + 2.0 * x[1], 2.0 * x[0] - 10.0 * x[1] + 7.0]))
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let g = central_gradient(quad, &x).unwrap();
        let want = quad_grad(&x).unwrap();
        assert!((g - want).amax() < 1e-8);
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let x = DVector::from_vec(vec![120.0, -3.0]);
        let h = hessian_from_gradient(quad_grad, &x).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[6.0, 2.0, 2.0, -10.0]);
        assert!((h - want).amax() < 1e-8);
    }

    #[test]
    fn step_sizes() {
        assert_eq!(step_size(0.0), 1e-5);
        assert_eq!(step_size(200.0), 2e-3);
    }

    #[test]
    fn undefined_stencil_point_is_an_error() {
        let f = |x: &DVector<f64>| (x[0] > 0.0).then(|| x[0].ln());
        let x = DVector::from_element(1, 1e-6);
        assert!(matches!(
            central_gradient(f, &x),
            Err(LbgmError::NonFiniteStencil { index: 0 })
        ));
    }
}
