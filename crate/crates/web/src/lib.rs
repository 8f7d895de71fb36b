//! WebAssembly bindings for the demo page in `www/`.

use cph_core::bias::{DoubleWellSpline, SiteBias, DEFAULT_HALF_WIDTH};
use cph_core::coupling::{macroscopic_curve, macroscopic_pkas_exact, microstate_probabilities};
use cph_core::pfc::{correct_site, free_energy, integration_bounds, partition_halves_over, DEFAULT_TOLERANCE};
use cph_core::titration::{hh_curve, hill_curve};
use cph_core::units::{beta, kt};
use wasm_bindgen::prelude::*;

const TEMPERATURE: f64 = 300.0;
const SAMPLES: usize = 261;

fn samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Corrected double-well bias along λp at one pH.
#[wasm_bindgen]
pub struct BiasProfile {
    lambda: Vec<f64>,
    energy: Vec<f64>,
    well_depth: f64,
    deprotonated: f64,
}

#[wasm_bindgen]
impl BiasProfile {
    #[wasm_bindgen(getter)]
    pub fn lambda(&self) -> Vec<f64> {
        self.lambda.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> Vec<f64> {
        self.energy.clone()
    }

    /// Depth of the deprotonated well chosen by the correction (kJ/mol).
    #[wasm_bindgen(getter)]
    pub fn well_depth(&self) -> f64 {
        self.well_depth
    }

    /// Deprotonated population of the corrected potential by quadrature.
    #[wasm_bindgen(getter)]
    pub fn deprotonated(&self) -> f64 {
        self.deprotonated
    }
}

/// Builds the bias for a site with reference pKa `pka` at `ph`, with the
/// deprotonated well `width_ratio` times narrower than the protonated one,
/// and applies the partition function correction.
#[wasm_bindgen]
pub fn bias_profile(barrier: f64, width_ratio: f64, pka: f64, ph: f64) -> Result<BiasProfile, JsError> {
    if !(width_ratio > 0.0) {
        return Err(JsError::new("width ratio must be positive"));
    }
    let mut bias = SiteBias::flat(pka, ph, TEMPERATURE);
    bias.spline = DoubleWellSpline::with_widths(barrier, DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH / width_ratio);
    bias.spline.rebuild().map_err(|e| JsError::new(&e.to_string()))?;
    correct_site(&mut bias, DEFAULT_TOLERANCE).map_err(|e| JsError::new(&e.to_string()))?;
    let b = beta(TEMPERATURE);
    let (lo, hi) = integration_bounds(&bias.spline, b);
    let (zp, zd) = partition_halves_over(&|x| bias.eval_p_without_vmm(x), b, lo, hi).map_err(|e| JsError::new(&e.to_string()))?;
    let lambda = samples(-0.15, 1.15, SAMPLES);
    let energy = lambda.iter().map(|&x| bias.eval_p_without_vmm(x)).collect();
    let deprotonated = 1.0 / (1.0 + (b * free_energy(zp, zd, b)).exp());
    Ok(BiasProfile { lambda, energy, well_depth: bias.spline.well1_depth, deprotonated })
}

/// Henderson-Hasselbalch and Hill curves on `n` pH points, laid out as
/// [pH..., H-H..., Hill...].
#[wasm_bindgen]
pub fn titration_curves(pka: f64, hill_n: f64, ph_lo: f64, ph_hi: f64, n: usize) -> Vec<f64> {
    let ph = samples(ph_lo, ph_hi, n.max(2));
    let mut out = ph.clone();
    out.extend(ph.iter().map(|&p| hh_curve(pka, p)));
    out.extend(ph.iter().map(|&p| hill_curve(pka, hill_n, p)));
    out
}

/// Two coupled sites: [pKa1, pKa2] followed by the pH grid, the mean
/// bound protons and the four microstate populations (00, 01, 10, 11;
/// 1 = deprotonated), each a block of `n` values.
#[wasm_bindgen]
pub fn coupled_pair(pka_a: f64, pka_b: f64, coupling: f64, ph_lo: f64, ph_hi: f64, n: usize) -> Vec<f64> {
    let (p1, p2) = macroscopic_pkas_exact(pka_a, pka_b, coupling, TEMPERATURE);
    let ph = samples(ph_lo, ph_hi, n.max(2));
    let mut out = vec![p1, p2];
    out.extend(&ph);
    out.extend(ph.iter().map(|&p| macroscopic_curve(p1, p2, p)));
    let micro: Vec<[[f64; 2]; 2]> = ph.iter().map(|&p| microstate_probabilities(pka_a, pka_b, coupling, p, TEMPERATURE)).collect();
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        out.extend(micro.iter().map(|m| m[a][b]));
    }
    out
}

/// ln(10)·kT at the demo temperature, the energy of one pKa unit.
#[wasm_bindgen]
pub fn pka_unit() -> f64 {
    std::f64::consts::LN_10 * kt(TEMPERATURE)
}
