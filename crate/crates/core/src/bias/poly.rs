use crate::error::{Error, Result};
use crate::units::{LAMBDA_MAX, LAMBDA_MIN};
use serde::{Deserialize, Serialize};

/// Dense 2D polynomial Σ c[i][j]·λp^i·λt^j in kJ/mol, stored row-major
/// with `i` (the λp power) as the row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPolynomial {
    pub degree_p: usize,
    pub degree_t: usize,
    pub coeffs: Vec<f64>,
}

impl CalibrationPolynomial {
    pub fn zero(degree_p: usize, degree_t: usize) -> Self {
        Self { degree_p, degree_t, coeffs: vec![0.0; (degree_p + 1) * (degree_t + 1)] }
    }

    pub fn new(degree_p: usize, degree_t: usize, coeffs: Vec<f64>) -> Result<Self> {
        let poly = Self { degree_p, degree_t, coeffs };
        poly.validate()?;
        Ok(poly)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.len() != (self.degree_p + 1) * (self.degree_t + 1) {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients for degrees ({}, {}), got {}",
                (self.degree_p + 1) * (self.degree_t + 1),
                self.degree_p,
                self.degree_t,
                self.coeffs.len()
            )));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite polynomial coefficient".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * (self.degree_t + 1) + j]
    }

    pub fn set_coeff(&mut self, i: usize, j: usize, value: f64) {
        let nt = self.degree_t + 1;
        self.coeffs[i * nt + j] = value;
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn negated(&self) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| -c).collect(), ..self.clone() }
    }

    /// Value and gradient (∂/∂λp, ∂/∂λt) with the λ range checked.
    pub fn eval_checked(&self, lambda_p: f64, lambda_t: f64) -> Result<(f64, f64, f64)> {
        for l in [lambda_p, lambda_t] {
            if !(LAMBDA_MIN..=LAMBDA_MAX).contains(&l) {
                return Err(Error::Domain(l, LAMBDA_MIN, LAMBDA_MAX));
            }
        }
        Ok(self.eval(lambda_p, lambda_t))
    }

    /// Value and gradient without range checks.
    pub fn eval(&self, lambda_p: f64, lambda_t: f64) -> (f64, f64, f64) {
        let nt = self.degree_t + 1;
        // Horner over λp of row polynomials in λt (and their derivatives).
        let mut v = 0.0;
        let mut dp = 0.0;
        let mut dt = 0.0;
        for i in (0..=self.degree_p).rev() {
            let row = &self.coeffs[i * nt..(i + 1) * nt];
            let mut r = 0.0;
            let mut rd = 0.0;
            for &c in row.iter().rev() {
                rd = rd * lambda_t + r;
                r = r * lambda_t + c;
            }
            dp = dp * lambda_p + v;
            v = v * lambda_p + r;
            dt = dt * lambda_p + rd;
        }
        (v, dp, dt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let poly: Self = serde_json::from_str(text)?;
        poly.validate()?;
        Ok(poly)
    }
}
