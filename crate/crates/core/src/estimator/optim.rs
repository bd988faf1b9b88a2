//! BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsSettings {
    pub max_iterations: usize,
    /// Relative change in the objective between accepted iterates.
    pub f_tol: f64,
    /// Bound on the scaled gradient, see [`scaled_gradient_norm`].
    pub gradient_tol: f64,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start point and after every accepted step.
    pub trace: Vec<f64>,
}

/// `max_i |g_i| · max(|x_i|, 1) / max(|f|, 1)`: the relative change in `f`
/// produced by a relative change in any single coordinate.
pub fn scaled_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, f: f64) -> f64 {
    let denom = f.abs().max(1.0);
    x.iter()
        .zip(g.iter())
        .map(|(xi, gi)| gi.abs() * xi.abs().max(1.0) / denom)
        .fold(0.0, f64::max)
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimize `objective`, which returns `None` where the function is undefined.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, settings: &BfgsSettings) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let Some((mut f, mut g)) = objective(&x0).filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite())) else {
        return BfgsOutcome {
            gradient: DVector::from_element(n, f64::NAN),
            x: x0,
            f: f64::NAN,
            iterations: 0,
            converged: false,
            trace: Vec::new(),
        };
    };
    let mut x = x0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first_update = true;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // Lost descent: restart from steepest descent.
            h_inv = DMatrix::identity(n, n);
            first_update = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = if first_update {
            (1.0 / dir.amax().max(1e-12)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let x_new = &x + step * &dir;
            if let Some((f_new, g_new)) = objective(&x_new) {
                if f_new.is_finite()
                    && g_new.iter().all(|v| v.is_finite())
                    && f_new <= f + ARMIJO_C1 * step * slope
                {
                    accepted = Some((x_new, f_new, g_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No decrease possible along the search direction.
            converged = scaled_gradient_norm(&x, &g, f) < settings.gradient_tol;
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let rel_change = (f - f_new).abs() / f_new.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);

        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                let scale = sy / y.dot(&y);
                h_inv = DMatrix::identity(n, n) * scale;
                first_update = false;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }

        if rel_change < settings.f_tol && scaled_gradient_norm(&x, &g, f) < settings.gradient_tol {
            converged = true;
            break;
        }
    }

    BfgsOutcome {
        x,
        f,
        gradient: g,
        iterations,
        converged,
        trace,
    }
}
