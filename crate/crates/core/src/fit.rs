//! Small dense Levenberg-Marquardt solver for curve fits with analytic
//! Jacobians.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tol: 1e-10, step_tol: 1e-14, initial_damping: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub sse: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Minimizes Σ r_i(θ)². `model` fills the residual vector and the
/// Jacobian (rows = residuals, columns = parameters) at θ.
pub fn levenberg_marquardt<F>(mut model: F, initial: &[f64], n_residuals: usize, options: &LmOptions) -> Result<LmSolution>
where
    F: FnMut(&[f64], &mut DVector<f64>, &mut DMatrix<f64>),
{
    let np = initial.len();
    let mut theta = DVector::from_column_slice(initial);
    let mut r = DVector::zeros(n_residuals);
    let mut j = DMatrix::zeros(n_residuals, np);
    model(theta.as_slice(), &mut r, &mut j);
    let mut sse = r.norm_squared();
    if !sse.is_finite() {
        return Err(Error::NotConverged { iterations: 0, gradient_norm: f64::NAN });
    }
    let mut mu = options.initial_damping;
    let mut r_try = DVector::zeros(n_residuals);
    let mut j_try = DMatrix::zeros(n_residuals, np);
    for it in 0..options.max_iterations {
        let g = j.transpose() * &r;
        let gnorm = g.norm();
        if gnorm < options.gradient_tol {
            return Ok(LmSolution { params: theta.as_slice().to_vec(), sse, gradient_norm: gnorm, iterations: it });
        }
        let jtj = j.transpose() * &j;
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..np {
                // Marquardt scaling keeps the damping invariant to parameter units
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let candidate = &theta + &step;
            model(candidate.as_slice(), &mut r_try, &mut j_try);
            let sse_try = r_try.norm_squared();
            if sse_try.is_finite() && sse_try <= sse {
                let small = step.norm() <= options.step_tol * (theta.norm() + options.step_tol);
                theta = candidate;
                std::mem::swap(&mut r, &mut r_try);
                std::mem::swap(&mut j, &mut j_try);
                sse = sse_try;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                if small {
                    let gnorm = (j.transpose() * &r).norm();
                    return Ok(LmSolution { params: theta.as_slice().to_vec(), sse, gradient_norm: gnorm, iterations: it + 1 });
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // no downhill step at any damping: we sit at a minimum up to rounding
            let gnorm = (j.transpose() * &r).norm();
            let scale = 1.0 + sse.sqrt();
            if gnorm < 1e-8 * scale {
                return Ok(LmSolution { params: theta.as_slice().to_vec(), sse, gradient_norm: gnorm, iterations: it });
            }
            return Err(Error::NotConverged { iterations: it, gradient_norm: gnorm });
        }
    }
    let gnorm = (j.transpose() * &r).norm();
    Err(Error::NotConverged { iterations: options.max_iterations, gradient_norm: gnorm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let sol = levenberg_marquardt(
            |p, r, j| {
                for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
                    let e = (-p[1] * x).exp();
                    r[i] = p[0] * e - y;
                    j[(i, 0)] = e;
                    j[(i, 1)] = -p[0] * x * e;
                }
            },
            &[1.0, 0.1],
            xs.len(),
            &LmOptions::default(),
        )
        .unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-9 && (sol.params[1] - 0.7).abs() < 1e-9);
        assert!(sol.gradient_norm < 1e-8);
    }

    #[test]
    fn rosenbrock_as_least_squares() {
        let sol = levenberg_marquardt(
            |p, r, j| {
                r[0] = 10.0 * (p[1] - p[0] * p[0]);
                r[1] = 1.0 - p[0];
                j[(0, 0)] = -20.0 * p[0];
                j[(0, 1)] = 10.0;
                j[(1, 0)] = -1.0;
                j[(1, 1)] = 0.0;
            },
            &[-1.2, 1.0],
            2,
            &LmOptions::default(),
        )
        .unwrap();
        assert!((sol.params[0] - 1.0).abs() < 1e-8 && (sol.params[1] - 1.0).abs() < 1e-8);
    }
}
