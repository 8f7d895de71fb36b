//! Thermodynamic-integration calibration of Vmm on a 2D λ grid.
//!
//! Derivative samples ⟨∂U/∂λp⟩ and ⟨∂U/∂λt⟩ are collected on the Cartesian
//! grid, a 2D polynomial is fitted to both derivative blocks jointly, and
//! Vmm is its negation, which flattens the reference compound.

use crate::bias::CalibrationPolynomial;
use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// λ values along each axis of the calibration grid.
pub const GRID_LAMBDAS: [f64; 14] = [-0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 1.0, 1.05, 1.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub mean_dp: f64,
    pub se_dp: f64,
    pub mean_dt: f64,
    pub se_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    pub lambda_values: Vec<f64>,
    pub samples_per_point: usize,
    pub points: Vec<GridPoint>,
}

/// Synthetic stand-in for the reference compound: a closed-form
/// free-energy surface plus Gaussian sampling noise on each derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub surface: CalibrationPolynomial,
    /// Per-sample noise (kJ/mol).
    pub sigma: f64,
}

impl ReferenceModel {
    pub fn energy(&self, lambda_p: f64, lambda_t: f64) -> f64 {
        self.surface.eval(lambda_p, lambda_t).0
    }

    pub fn gradient(&self, lambda_p: f64, lambda_t: f64) -> (f64, f64) {
        let (_, dp, dt) = self.surface.eval(lambda_p, lambda_t);
        (dp, dt)
    }
}

pub fn sample_ti_grid(model: &ReferenceModel, lambda_values: &[f64], n_samples: usize, seed: u64) -> Result<CalibrationGrid> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    if !(model.sigma >= 0.0) {
        return Err(Error::InvalidInput("sigma must be >= 0".into()));
    }
    let mut points = Vec::with_capacity(lambda_values.len().pow(2));
    for (i, &lp) in lambda_values.iter().enumerate() {
        for (j, &lt) in lambda_values.iter().enumerate() {
            let (gp, gt) = model.gradient(lp, lt);
            let mut rng = rng::stream(seed, &[i as u64, j as u64]);
            let mut draw = |exact: f64| -> (f64, f64) {
                if model.sigma == 0.0 {
                    return (exact, 0.0);
                }
                let xs: Vec<f64> =
                    (0..n_samples).map(|_| exact + model.sigma * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
                let n = n_samples as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let se = if n_samples > 1 {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
                } else {
                    model.sigma
                };
                (mean, se)
            };
            let (mean_dp, se_dp) = draw(gp);
            let (mean_dt, se_dt) = draw(gt);
            points.push(GridPoint { lambda_p: lp, lambda_t: lt, mean_dp, se_dp, mean_dt, se_dt });
        }
    }
    Ok(CalibrationGrid { lambda_values: lambda_values.to_vec(), samples_per_point: n_samples, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    /// Vmm = −ΔG_MM, constant term fixed to zero.
    pub vmm: CalibrationPolynomial,
    /// Standard errors of the Vmm coefficients (same layout; constant term 0).
    pub coeff_se: Vec<f64>,
    /// RMS residual of the stacked derivative fit (kJ/mol).
    pub residual_rms: f64,
}

fn powi(x: f64, n: usize) -> f64 {
    x.powi(n as i32)
}

/// Least-squares fit of a degree × degree polynomial whose partial
/// derivatives match both sampled derivative blocks.
pub fn fit_calibration_poly(grid: &CalibrationGrid, degree: usize) -> Result<CalibrationFit> {
    if grid.points.is_empty() {
        return Err(Error::InvalidInput("empty calibration grid".into()));
    }
    let nt = degree + 1;
    let terms: Vec<(usize, usize)> =
        (0..=degree).flat_map(|i| (0..=degree).map(move |j| (i, j))).filter(|&(i, j)| i + j > 0).collect();
    let rows = 2 * grid.points.len();
    let mut a = DMatrix::<f64>::zeros(rows, terms.len());
    let mut b = DVector::<f64>::zeros(rows);
    let mut var = DVector::<f64>::zeros(rows);
    for (r, pt) in grid.points.iter().enumerate() {
        let (p, t) = (pt.lambda_p, pt.lambda_t);
        for (c, &(i, j)) in terms.iter().enumerate() {
            if i > 0 {
                a[(2 * r, c)] = i as f64 * powi(p, i - 1) * powi(t, j);
            }
            if j > 0 {
                a[(2 * r + 1, c)] = j as f64 * powi(p, i) * powi(t, j - 1);
            }
        }
        b[2 * r] = pt.mean_dp;
        b[2 * r + 1] = pt.mean_dt;
        var[2 * r] = pt.se_dp * pt.se_dp;
        var[2 * r + 1] = pt.se_dt * pt.se_dt;
    }
    if rows < terms.len() {
        return Err(Error::SingularFit(format!("{} unknowns but only {rows} derivative rows", terms.len())));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::SingularFit(format!("condition {:e} with {} unknowns and {rows} rows", smax / smin, terms.len())));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::SingularFit(e.to_string()))?;
    let resid = &a * &x - &b;
    let residual_rms = (resid.norm_squared() / rows as f64).sqrt();

    // sandwich covariance (AᵀA)⁻¹ Aᵀ diag(se²) A (AᵀA)⁻¹
    let ata_inv = (a.transpose() * &a)
        .try_inverse()
        .ok_or_else(|| Error::SingularFit("normal matrix not invertible".into()))?;
    let weighted = DMatrix::from_fn(rows, terms.len(), |r, c| a[(r, c)] * var[r]);
    let cov = &ata_inv * (a.transpose() * weighted) * &ata_inv;

    let mut vmm = CalibrationPolynomial::zero(degree, degree);
    let mut coeff_se = vec![0.0; nt * nt];
    for (c, &(i, j)) in terms.iter().enumerate() {
        vmm.set_coeff(i, j, -x[c]);
        coeff_se[i * nt + j] = cov[(c, c)].max(0.0).sqrt();
    }
    Ok(CalibrationFit { vmm, coeff_se, residual_rms })
}
