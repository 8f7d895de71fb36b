//! Physical constants and the protonation convention.
//!
//! Internal units: energy kJ/mol, time ps, mass u, temperature K. The λ
//! coordinates are treated as unit-scale lengths, so `F / m` is in 1/ps².

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

/// Molar gas constant in kJ/(mol·K).
pub const GAS_CONSTANT: f64 = 8.314e-3;

/// Default λ particle mass (u).
pub const LAMBDA_MASS: f64 = 60.0;

/// λp at or above this value is classified deprotonated.
pub const ASSIGNMENT_THRESHOLD: f64 = 0.5;

/// Range over which λ is confined by the quartic walls.
pub const LAMBDA_MIN: f64 = -0.15;
pub const LAMBDA_MAX: f64 = 1.15;

/// Thermal energy R·T in kJ/mol.
pub fn kt(temperature: f64) -> f64 {
    GAS_CONSTANT * temperature
}

pub fn beta(temperature: f64) -> f64 {
    1.0 / kt(temperature)
}

/// Free energy of deprotonation relative to the reference compound,
/// ln(10)·R·T·(pKa_ref − pH). Positive values penalize the λ = 1 end.
pub fn delta_g_chem(pka_ref: f64, ph: f64, temperature: f64) -> f64 {
    debug_assert!(temperature > 0.0);
    LN_10 * kt(temperature) * (pka_ref - ph)
}

/// The inverse of [`delta_g_chem`]: the pKa shift produced by a free energy.
pub fn pka_shift(dg: f64, temperature: f64) -> f64 {
    dg / (LN_10 * kt(temperature))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtonationState {
    Protonated,
    Deprotonated,
}

impl ProtonationState {
    pub fn is_deprotonated(self) -> bool {
        self == ProtonationState::Deprotonated
    }
}

/// λ = 0 is the protonated form, λ = 1 the deprotonated one.
pub fn classify_frame(lambda_p: f64) -> Result<ProtonationState> {
    if !lambda_p.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite lambda_p {lambda_p}")));
    }
    Ok(classify(lambda_p))
}

/// Infallible variant for the hot path; NaN maps to protonated.
#[inline]
pub fn classify(lambda_p: f64) -> ProtonationState {
    if lambda_p >= ASSIGNMENT_THRESHOLD {
        ProtonationState::Deprotonated
    } else {
        ProtonationState::Protonated
    }
}

/// Macroscopic pKa from the two microscopic tautomer pKas:
/// 10^(−pKa) = 10^(−pKa_δ) + 10^(−pKa_ε).
pub fn macro_pka(pka_delta: f64, pka_eps: f64) -> f64 {
    -(10f64.powf(-pka_delta) + 10f64.powf(-pka_eps)).log10()
}
