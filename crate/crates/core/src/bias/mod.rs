//! Composite bias V(λp, λt) = Vmm + VpH + Vdw.

mod ph;
mod poly;
mod spline;

pub use ph::PhOffset;
pub use poly::CalibrationPolynomial;
pub use spline::{DoubleWellSpline, Knot, Well, APEX, DEFAULT_BARRIER, DEFAULT_HALF_WIDTH, DEFAULT_WALL_STIFFNESS};

use crate::units::{classify, delta_g_chem, ProtonationState};
use serde::{Deserialize, Serialize};

/// Bias on the tautomer coordinate λt.
///
/// The two splines are blended linearly in λp, so the protonated-state
/// spline acts at λp = 0 and the deprotonated-state one at λp = 1. The
/// δ tautomer sits at λt = 0; `offset` (ln10·RT·(pKa_ε − pKa_δ)) tilts
/// λt only in the deprotonated state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TautomerBias {
    pub protonated: DoubleWellSpline,
    pub deprotonated: DoubleWellSpline,
    pub offset: f64,
}

impl TautomerBias {
    pub fn new(offset: f64, barrier: f64) -> Self {
        Self { protonated: DoubleWellSpline::symmetric(barrier), deprotonated: DoubleWellSpline::symmetric(barrier), offset }
    }

    pub fn spline(&self, state: ProtonationState) -> &DoubleWellSpline {
        match state {
            ProtonationState::Protonated => &self.protonated,
            ProtonationState::Deprotonated => &self.deprotonated,
        }
    }

    pub fn spline_mut(&mut self, state: ProtonationState) -> &mut DoubleWellSpline {
        match state {
            ProtonationState::Protonated => &mut self.protonated,
            ProtonationState::Deprotonated => &mut self.deprotonated,
        }
    }

    /// Returns (energy, ∂/∂λp, ∂/∂λt).
    #[inline]
    pub fn eval(&self, lambda_p: f64, lambda_t: f64) -> (f64, f64, f64) {
        let (a, da) = self.protonated.eval(lambda_t);
        let (b, db) = self.deprotonated.eval(lambda_t);
        let b_total = b + self.offset * lambda_t;
        let e = (1.0 - lambda_p) * a + lambda_p * b_total;
        (e, b_total - a, (1.0 - lambda_p) * da + lambda_p * (db + self.offset))
    }
}

/// All bias terms of one titratable site at a fixed pH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBias {
    pub vmm: Option<CalibrationPolynomial>,
    pub ph: PhOffset,
    pub spline: DoubleWellSpline,
    pub tautomer: Option<TautomerBias>,
}

impl SiteBias {
    pub fn flat(pka_ref: f64, ph: f64, temperature: f64) -> Self {
        Self { vmm: None, ph: PhOffset::new(pka_ref, ph, temperature), spline: DoubleWellSpline::default(), tautomer: None }
    }

    pub fn tautomeric(pka_macro: f64, pka_delta: f64, pka_eps: f64, ph: f64, temperature: f64) -> Self {
        let offset = delta_g_chem(pka_eps, pka_delta, temperature);
        Self { tautomer: Some(TautomerBias::new(offset, DEFAULT_BARRIER)), ..Self::flat(pka_macro, ph, temperature) }
    }

    pub fn has_tautomers(&self) -> bool {
        self.tautomer.is_some()
    }

    /// Energy and gradient of Vmm + VpH + Vdw(λp) + tautomer terms.
    #[inline]
    pub fn eval(&self, lambda_p: f64, lambda_t: f64) -> (f64, f64, f64) {
        let (mut e, mut gp, mut gt) = match &self.vmm {
            Some(p) => p.eval(lambda_p, lambda_t),
            None => (0.0, 0.0, 0.0),
        };
        let (v, g) = self.ph.eval(lambda_p);
        e += v;
        gp += g;
        let (v, g) = self.spline.eval(lambda_p);
        e += v;
        gp += g;
        if let Some(t) = &self.tautomer {
            let (v, dp, dt) = t.eval(lambda_p, lambda_t);
            e += v;
            gp += dp;
            gt += dt;
        }
        (e, gp, gt)
    }

    /// Bias along λp without Vmm, the potential the partition-function
    /// correction integrates (tautomer terms are handled separately).
    #[inline]
    pub fn eval_p_without_vmm(&self, lambda_p: f64) -> f64 {
        self.ph.eval(lambda_p).0 + self.spline.eval(lambda_p).0
    }

    pub fn state_of(&self, lambda_p: f64) -> ProtonationState {
        classify(lambda_p)
    }
}
