use crate::bias::{CalibrationPolynomial, SiteBias};
use crate::error::{Error, Result};
use crate::units::{macro_pka, LAMBDA_MASS};
use serde::{Deserialize, Serialize};

/// One titratable site: λ coordinates, velocities and its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSite {
    pub id: String,
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub vel_p: f64,
    pub vel_t: f64,
    pub mass: f64,
    pub pka_macro: f64,
    /// Microscopic (δ, ε) reference pKas for tautomeric sites.
    pub pka_micro: Option<(f64, f64)>,
    /// Charge of the protonated residue; the deprotonated form carries one less.
    pub charge_prot: f64,
    pub bias: SiteBias,
    /// Free-energy profile of the model compound along λ, which a
    /// calibrated `bias.vmm` cancels.
    pub reference: Option<CalibrationPolynomial>,
}

impl LambdaSite {
    pub fn new(id: impl Into<String>, pka: f64) -> Self {
        Self {
            id: id.into(),
            lambda_p: 0.0,
            lambda_t: 0.0,
            vel_p: 0.0,
            vel_t: 0.0,
            mass: LAMBDA_MASS,
            pka_macro: pka,
            pka_micro: None,
            charge_prot: 0.0,
            bias: SiteBias::flat(pka, pka, 300.0),
            reference: None,
        }
    }

    /// His-like site with two deprotonated tautomers; the macroscopic
    /// pKa follows from the microscopic pair.
    pub fn tautomeric(id: impl Into<String>, pka_delta: f64, pka_eps: f64) -> Self {
        let pka = macro_pka(pka_delta, pka_eps);
        Self {
            pka_micro: Some((pka_delta, pka_eps)),
            charge_prot: 1.0,
            bias: SiteBias::tautomeric(pka, pka_delta, pka_eps, pka, 300.0),
            ..Self::new(id, pka)
        }
    }

    pub fn has_tautomers(&self) -> bool {
        self.bias.tautomer.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidInput(format!("site {}: mass must be > 0", self.id)));
        }
        if let Some((d, e)) = self.pka_micro {
            let m = macro_pka(d, e);
            if (m - self.pka_macro).abs() > 1e-3 {
                return Err(Error::InvalidInput(format!(
                    "site {}: macroscopic pKa {} inconsistent with tautomer pKas {d}/{e} (expected {m:.4})",
                    self.id, self.pka_macro
                )));
            }
            if self.bias.tautomer.is_none() {
                return Err(Error::InvalidInput(format!("site {}: tautomer pKas without tautomer bias", self.id)));
            }
        }
        Ok(())
    }

    /// Points the pH term at new conditions; the wells need a fresh PFC afterwards.
    pub fn set_conditions(&mut self, ph: f64, temperature: f64) {
        self.bias.ph.pka_ref = self.pka_macro;
        self.bias.ph.ph = ph;
        self.bias.ph.temperature = temperature;
        if let (Some(t), Some((d, e))) = (self.bias.tautomer.as_mut(), self.pka_micro) {
            t.offset = crate::units::delta_g_chem(e, d, temperature);
        }
    }

    #[inline]
    fn eval(&self, lambda_p: f64, lambda_t: f64) -> (f64, f64, f64) {
        let (mut e, mut gp, mut gt) = self.bias.eval(lambda_p, lambda_t);
        if let Some(r) = &self.reference {
            let (v, a, b) = r.eval(lambda_p, lambda_t);
            e += v;
            gp += a;
            gt += b;
        }
        (e, gp, gt)
    }
}

/// Two-state conformational switch that shifts site energies and emits
/// feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentChain {
    pub k01: f64,
    pub k10: f64,
    /// Linear λp shift per site (kJ/mol) while in state 0 and state 1.
    pub shifts: [Vec<f64>; 2],
    pub mu: [Vec<f64>; 2],
    pub sigma_feat: f64,
    pub initial_state: usize,
}

impl LatentChain {
    pub fn feature_dim(&self) -> usize {
        self.mu[0].len()
    }

    pub fn rate_out_of(&self, state: usize) -> f64 {
        if state == 0 {
            self.k01
        } else {
            self.k10
        }
    }
}

/// Synthetic environment: linear shifts, pair couplings and latent chains.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub shifts: Vec<f64>,
    /// Symmetric coupling matrix with zero diagonal.
    pub couplings: Vec<Vec<f64>>,
    pub chains: Vec<LatentChain>,
}

impl EnvironmentModel {
    pub fn uncoupled(n_sites: usize) -> Self {
        Self { shifts: vec![0.0; n_sites], couplings: vec![vec![0.0; n_sites]; n_sites], chains: Vec::new() }
    }

    pub fn set_coupling(&mut self, i: usize, j: usize, value: f64) {
        self.couplings[i][j] = value;
        self.couplings[j][i] = value;
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if self.shifts.len() != n_sites || self.couplings.len() != n_sites {
            return Err(Error::InvalidInput(format!("environment sized for {} sites, system has {n_sites}", self.shifts.len())));
        }
        for (i, row) in self.couplings.iter().enumerate() {
            if row.len() != n_sites {
                return Err(Error::InvalidInput("coupling matrix is not square".into()));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidInput(format!("coupling diagonal at site {i} must be zero")));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != self.couplings[j][i] {
                    return Err(Error::InvalidInput(format!("coupling matrix not symmetric at ({i},{j})")));
                }
            }
        }
        for (c, ch) in self.chains.iter().enumerate() {
            if !(ch.k01 >= 0.0 && ch.k10 >= 0.0) {
                return Err(Error::InvalidInput(format!("chain {c}: rates must be >= 0")));
            }
            if ch.shifts.iter().any(|s| s.len() != n_sites) {
                return Err(Error::InvalidInput(format!("chain {c}: need one shift per site")));
            }
            if ch.feature_dim() < 2 || ch.mu[1].len() != ch.feature_dim() {
                return Err(Error::InvalidInput(format!("chain {c}: feature means must share a dimension >= 2")));
            }
            if !(ch.sigma_feat >= 0.0) || ch.initial_state > 1 {
                return Err(Error::InvalidInput(format!("chain {c}: bad noise or initial state")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSystem {
    pub sites: Vec<LambdaSite>,
    pub env: EnvironmentModel,
}

impl LambdaSystem {
    pub fn new(sites: Vec<LambdaSite>) -> Self {
        let env = EnvironmentModel::uncoupled(sites.len());
        Self { sites, env }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::InvalidInput("system has no sites".into()));
        }
        for s in &self.sites {
            s.validate()?;
        }
        self.env.validate(self.sites.len())
    }

    pub fn feature_dim(&self) -> usize {
        self.env.chains.iter().map(LatentChain::feature_dim).sum()
    }

    /// Number of dynamic λ coordinates (λt only moves on tautomeric sites).
    pub fn n_dof(&self) -> usize {
        self.sites.iter().map(|s| if s.has_tautomers() { 2 } else { 1 }).sum()
    }

    /// Linear λp coefficient from the environment for site `i`.
    #[inline]
    fn linear_shift(&self, i: usize, latent: &[usize]) -> f64 {
        let mut w = self.env.shifts[i];
        for (ch, &s) in self.env.chains.iter().zip(latent) {
            w += ch.shifts[s][i];
        }
        w
    }

    pub fn potential_energy(&self, latent: &[usize]) -> f64 {
        let mut e = 0.0;
        for (i, s) in self.sites.iter().enumerate() {
            e += s.eval(s.lambda_p, s.lambda_t).0 + self.linear_shift(i, latent) * s.lambda_p;
            for j in i + 1..self.sites.len() {
                e += self.env.couplings[i][j] * s.lambda_p * self.sites[j].lambda_p;
            }
        }
        e
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.sites
            .iter()
            .map(|s| {
                let kt = if s.has_tautomers() { s.vel_t * s.vel_t } else { 0.0 };
                0.5 * s.mass * (s.vel_p * s.vel_p + kt)
            })
            .sum()
    }

    /// Fills `forces` with (F_p, F_t) = −∇ of the total potential; F_t is
    /// zero on sites without tautomers.
    pub fn total_force(&self, latent: &[usize], forces: &mut [(f64, f64)]) {
        for (i, s) in self.sites.iter().enumerate() {
            let (_, gp, gt) = s.eval(s.lambda_p, s.lambda_t);
            let mut fp = -gp - self.linear_shift(i, latent);
            for (j, other) in self.sites.iter().enumerate() {
                if j != i {
                    fp -= self.env.couplings[i][j] * other.lambda_p;
                }
            }
            forces[i] = (fp, if s.has_tautomers() { -gt } else { 0.0 });
        }
    }
}
