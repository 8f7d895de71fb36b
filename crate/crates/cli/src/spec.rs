//! Experiment description in the `key = value` format.
//!
//! ```text
//! site.asp.pka = 4.0
//! site.his.pka_delta = 6.53
//! site.his.pka_eps = 6.92
//! coupling.asp.his = 2.5
//! replicas = 5
//! n_steps = 2000000
//! ```
//!
//! Sites are ordered by the line of their first key. Anything the reader
//! does not recognise is an error naming its line.

use cph_core::bias::CalibrationPolynomial;
use cph_core::config::{KeyValues, RunConfig};
use cph_core::dynamics::{LambdaSite, LambdaSystem, LatentChain};
use cph_core::titration::{FitKind, DEFAULT_BOOTSTRAP};
use cph_core::units::macro_pka;
use cph_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct SiteSpec {
    pub id: String,
    pub pka: f64,
    pub micro: Option<(f64, f64)>,
    pub barrier: Option<f64>,
    pub shift: f64,
    pub charge: Option<f64>,
    /// Free-energy profile of the model compound (calibration input).
    pub reference: Option<CalibrationPolynomial>,
    pub reference_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub sites: Vec<SiteSpec>,
    pub couplings: Vec<(usize, usize, f64)>,
    pub chains: Vec<LatentChain>,
    pub ph: Vec<f64>,
    /// pH of the single `simulate` run; defaults to the middle of the grid.
    pub simulate_ph: Option<f64>,
    pub replicas: usize,
    pub run: RunConfig,
    pub dbo: bool,
    pub bootstrap: usize,
    pub fit: FitKind,
    pub fma_components: usize,
    pub calibration_samples: usize,
    pub calibration_degree: usize,
    /// SHA-256 of the spec text.
    pub hash: String,
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// pKa ± 1 around the extreme sites, in 0.5 steps on the half-unit lattice.
pub fn auto_ph_grid(pkas: &[f64]) -> Vec<f64> {
    let lo = pkas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pkas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = (2.0 * (lo - 1.0)).floor() as i64;
    let end = (2.0 * (hi + 1.0)).ceil() as i64;
    (start..=end).map(|k| k as f64 / 2.0).collect()
}

fn parse_fit(value: &str, line: usize) -> Result<FitKind> {
    match value {
        "hh" => Ok(FitKind::HendersonHasselbalch),
        "hill" => Ok(FitKind::Hill),
        other => Err(config_err(line, format!("fit must be `hh` or `hill`, got `{other}`"))),
    }
}

/// Site ids in order of first appearance, for keys `<prefix><id>.<field>`.
fn ids_in_order(kv: &KeyValues, prefix: &str) -> Result<Vec<(String, usize)>> {
    let mut ids: Vec<(String, usize)> = Vec::new();
    for key in kv.keys_with_prefix(prefix) {
        let line = kv.line_of(&key).unwrap_or(0);
        let rest = &key[prefix.len()..];
        let Some((id, _)) = rest.split_once('.') else {
            return Err(config_err(line, format!("expected `{prefix}<name>.<field>`, got `{key}`")));
        };
        if id.is_empty() {
            return Err(config_err(line, format!("empty name in `{key}`")));
        }
        match ids.iter_mut().find(|(i, _)| i == id) {
            Some(e) => e.1 = e.1.min(line),
            None => ids.push((id.to_string(), line)),
        }
    }
    ids.sort_by_key(|(_, l)| *l);
    Ok(ids)
}

fn take_site(kv: &mut KeyValues, id: &str, line: usize) -> Result<SiteSpec> {
    let k = |f: &str| format!("site.{id}.{f}");
    let pka: Option<f64> = kv.take(&k("pka"))?;
    let delta: Option<f64> = kv.take(&k("pka_delta"))?;
    let eps: Option<f64> = kv.take(&k("pka_eps"))?;
    let micro = match (delta, eps) {
        (Some(d), Some(e)) => Some((d, e)),
        (None, None) => None,
        _ => return Err(config_err(line, format!("site {id}: give both pka_delta and pka_eps"))),
    };
    let pka = match (pka, micro) {
        (Some(p), Some((d, e))) => {
            let m = macro_pka(d, e);
            if (p - m).abs() > 1e-3 {
                return Err(config_err(line, format!("site {id}: pka {p} inconsistent with tautomer pKas (expected {m:.4})")));
            }
            p
        }
        (Some(p), None) => p,
        (None, Some((d, e))) => macro_pka(d, e),
        (None, None) => return Err(config_err(line, format!("site {id}: missing pka"))),
    };
    let ref_line = kv.line_of(&k("reference")).unwrap_or(line);
    let degree: usize = kv.take_or(&k("reference_degree"), 5)?;
    let reference = match kv.take_list::<f64>(&k("reference"))? {
        Some(c) => Some(CalibrationPolynomial::new(degree, degree, c).map_err(|e| config_err(ref_line, e.to_string()))?),
        None => None,
    };
    Ok(SiteSpec {
        id: id.to_string(),
        pka,
        micro,
        barrier: kv.take(&k("barrier"))?,
        shift: kv.take_or(&k("shift"), 0.0)?,
        charge: kv.take(&k("charge"))?,
        reference,
        reference_sigma: kv.take_or(&k("reference_sigma"), 0.0)?,
    })
}

fn take_chain(kv: &mut KeyValues, name: &str, line: usize, n_sites: usize) -> Result<LatentChain> {
    let k = |f: &str| format!("chain.{name}.{f}");
    let rates: Vec<f64> = kv.take_list(&k("rates"))?.ok_or_else(|| config_err(line, format!("chain {name}: missing rates")))?;
    if rates.len() != 2 {
        return Err(config_err(line, format!("chain {name}: rates takes k01,k10")));
    }
    let list = |kv: &mut KeyValues, f: &str, len: Option<usize>| -> Result<Vec<f64>> {
        let l = kv.line_of(&k(f)).unwrap_or(line);
        let v: Vec<f64> = kv.take_list(&k(f))?.ok_or_else(|| config_err(line, format!("chain {name}: missing {f}")))?;
        match len {
            Some(n) if v.len() != n => Err(config_err(l, format!("chain {name}: {f} needs {n} values, got {}", v.len()))),
            _ => Ok(v),
        }
    };
    let shift0 = list(kv, "shift0", Some(n_sites))?;
    let shift1 = list(kv, "shift1", Some(n_sites))?;
    let mu0 = list(kv, "mu0", None)?;
    let mu1 = list(kv, "mu1", Some(mu0.len()))?;
    Ok(LatentChain {
        k01: rates[0],
        k10: rates[1],
        shifts: [shift0, shift1],
        mu: [mu0, mu1],
        sigma_feat: kv.take_or(&k("sigma"), 1.0)?,
        initial_state: kv.take_or(&k("initial"), 0)?,
    })
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let site_ids = ids_in_order(&kv, "site.")?;
        if site_ids.is_empty() {
            return Err(config_err(0, "no sites defined (expected `site.<name>.pka = ...`)"));
        }
        let mut sites = Vec::new();
        for (id, line) in &site_ids {
            sites.push(take_site(&mut kv, id, *line)?);
        }

        let mut couplings = Vec::new();
        for key in kv.keys_with_prefix("coupling.") {
            let line = kv.line_of(&key).unwrap_or(0);
            let pair = key["coupling.".len()..].split_once('.');
            let index = |name: &str| sites.iter().position(|s| s.id == name);
            let (i, j) = match pair.map(|(a, b)| (index(a), index(b))) {
                Some((Some(i), Some(j))) if i != j => (i, j),
                _ => return Err(config_err(line, format!("`{key}` must name two different defined sites"))),
            };
            if couplings.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)) {
                return Err(config_err(line, format!("coupling between {} and {} given twice", sites[i].id, sites[j].id)));
            }
            couplings.push((i, j, kv.require::<f64>(&key)?));
        }

        let mut chains = Vec::new();
        for (name, line) in ids_in_order(&kv, "chain.")? {
            chains.push(take_chain(&mut kv, &name, line, sites.len())?);
        }

        let ph_line = kv.line_of("ph").unwrap_or(0);
        let ph = match kv.take_list::<f64>("ph")? {
            Some(mut v) => {
                v.sort_by(f64::total_cmp);
                v.dedup();
                if v.iter().any(|p| !p.is_finite()) {
                    return Err(config_err(ph_line, "pH values must be finite"));
                }
                v
            }
            None => auto_ph_grid(&sites.iter().map(|s| s.pka).collect::<Vec<_>>()),
        };
        let fit_line = kv.line_of("fit").unwrap_or(0);
        let fit = match kv.take::<String>("fit")? {
            Some(v) => parse_fit(&v, fit_line)?,
            None => FitKind::HendersonHasselbalch,
        };
        let rep_line = kv.line_of("replicas").unwrap_or(0);
        let replicas: usize = kv.take_or("replicas", 5)?;
        if replicas == 0 {
            return Err(config_err(rep_line, "replicas must be >= 1"));
        }
        let spec = Self {
            simulate_ph: kv.take("simulate_ph")?,
            ph,
            replicas,
            dbo: kv.take_or("dbo", true)?,
            bootstrap: kv.take_or("bootstrap", DEFAULT_BOOTSTRAP)?,
            fit,
            fma_components: kv.take_or("fma.components", cph_core::fma::DEFAULT_COMPONENTS)?,
            calibration_samples: kv.take_or("calibration.samples", 200)?,
            calibration_degree: kv.take_or("calibration.degree", 5)?,
            run: RunConfig::take_from(&mut kv)?,
            sites,
            couplings,
            chains,
            hash: format!("{:x}", Sha256::digest(text.as_bytes())),
        };
        kv.finish()?;
        spec.system()?.validate()?;
        Ok(spec)
    }

    /// The simulated system, without Vmm (see `with_vmm`).
    pub fn system(&self) -> Result<LambdaSystem> {
        let mut sites = Vec::with_capacity(self.sites.len());
        for s in &self.sites {
            let mut site = match s.micro {
                Some((d, e)) => LambdaSite::tautomeric(s.id.clone(), d, e),
                None => LambdaSite::new(s.id.clone(), s.pka),
            };
            if let Some(h) = s.barrier {
                site.bias.spline.set_barrier_height(h)?;
            }
            if let Some(q) = s.charge {
                site.charge_prot = q;
            }
            site.reference = s.reference.clone();
            sites.push(site);
        }
        let mut sys = LambdaSystem::new(sites);
        sys.env.shifts = self.sites.iter().map(|s| s.shift).collect();
        for &(i, j, v) in &self.couplings {
            sys.env.set_coupling(i, j, v);
        }
        sys.env.chains = self.chains.clone();
        Ok(sys)
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }
}
