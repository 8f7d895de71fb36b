use crate::units::delta_g_chem;
use serde::{Deserialize, Serialize};

/// pH-dependent tilt VpH(λ) = λ·ΔG_chem, so VpH(1) − VpH(0) = ln10·RT·(pKa_ref − pH).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhOffset {
    pub pka_ref: f64,
    pub ph: f64,
    pub temperature: f64,
}

impl PhOffset {
    pub fn new(pka_ref: f64, ph: f64, temperature: f64) -> Self {
        Self { pka_ref, ph, temperature }
    }

    #[inline]
    pub fn delta_g(&self) -> f64 {
        delta_g_chem(self.pka_ref, self.ph, self.temperature)
    }

    #[inline]
    pub fn eval(&self, lambda_p: f64) -> (f64, f64) {
        let dg = self.delta_g();
        (lambda_p * dg, dg)
    }
}
