//! Composite 8-point Gauss-Legendre quadrature.

use crate::error::{Error, Result};

const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Nodes and weights of the composite rule on `[a, b]`.
pub fn nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for &(x, w) in GL8.iter() {
            out.push((mid - half * x, half * w));
            out.push((mid + half * x, half * w));
        }
    }
    out
}

pub fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let half = 0.5 * h;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for &(x, w) in GL8.iter() {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        sum += s * half;
    }
    sum
}

/// Doubles the panel count from `min_panels` until two successive
/// estimates agree to `rel_tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, min_panels: usize, rel_tol: f64) -> Result<f64> {
    const MAX_PANELS: usize = 1 << 16;
    let mut panels = min_panels.max(1);
    let mut prev = composite(f, a, b, panels);
    if !prev.is_finite() {
        return Err(Error::Integration(format!("non-finite integrand on [{a}, {b}]")));
    }
    while panels < MAX_PANELS {
        panels *= 2;
        let next = composite(f, a, b, panels);
        if !next.is_finite() {
            return Err(Error::Integration(format!("non-finite integrand on [{a}, {b}]")));
        }
        if (next - prev).abs() <= rel_tol * next.abs() || next == 0.0 && prev == 0.0 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Integration(format!("no convergence to {rel_tol:e} on [{a}, {b}] with {MAX_PANELS} panels")))
}
