//! Titration curves: deprotonation fractions, H-H and Hill fits,
//! microscopic tautomer pKas and replica bootstrap.

use crate::dynamics::LambdaTrajectory;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::rng;
use crate::units::classify;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

/// Logistic deprotonated fraction 1/(10^(n(pKa − pH)) + 1) and x(1 − x).
#[inline]
fn logistic(pka: f64, n: f64, ph: f64) -> (f64, f64) {
    let z = LN_10 * n * (pka - ph);
    let (x, other) = if z >= 0.0 {
        let e = (-z).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = z.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    };
    (x, x * other)
}

pub fn hh_curve(pka: f64, ph: f64) -> f64 {
    logistic(pka, 1.0, ph).0
}

pub fn hill_curve(pka: f64, n: f64, ph: f64) -> f64 {
    logistic(pka, n, ph).0
}

pub fn deprotonation_fraction(lambda_p: &[f64], censored: &[bool]) -> Result<f64> {
    let (n, dep) = count_deprotonated(lambda_p, censored);
    if n == 0 {
        return Err(Error::EmptyData("every frame is censored".into()));
    }
    Ok(dep as f64 / n as f64)
}

fn count_deprotonated(lambda_p: &[f64], censored: &[bool]) -> (usize, usize) {
    let mut n = 0;
    let mut dep = 0;
    for (&l, &c) in lambda_p.iter().zip(censored) {
        if !c {
            n += 1;
            dep += usize::from(classify(l).is_deprotonated());
        }
    }
    (n, dep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    #[serde(rename = "hh")]
    HendersonHasselbalch,
    Hill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub pka: f64,
    pub hill_n: f64,
    pub sse: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn curve(&self, ph: f64) -> f64 {
        hill_curve(self.pka, self.hill_n, ph)
    }
}

fn check_points(points: &[(f64, f64)], min_distinct: usize) -> Result<()> {
    if points.iter().any(|&(p, x)| !p.is_finite() || !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidInput("titration points need finite pH and fractions in [0, 1]".into()));
    }
    let mut phs: Vec<f64> = points.iter().map(|p| p.0).collect();
    phs.sort_by(f64::total_cmp);
    phs.dedup();
    if phs.len() < min_distinct {
        return Err(Error::InvalidInput(format!("need at least {min_distinct} distinct pH values, got {}", phs.len())));
    }
    if points.windows(2).all(|w| w[0].1 == w[1].1) {
        return Err(Error::Unidentifiable(format!("all fractions equal {}", points[0].1)));
    }
    Ok(())
}

fn initial_pka(points: &[(f64, f64)]) -> f64 {
    points.iter().min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs())).map(|p| p.0).unwrap()
}

fn finish(params: &[f64], sol: crate::fit::LmSolution) -> FitResult {
    FitResult {
        pka: params[0],
        hill_n: params.get(1).copied().unwrap_or(1.0),
        sse: sol.sse,
        converged: true,
        gradient_norm: sol.gradient_norm,
        iterations: sol.iterations,
    }
}

/// Least-squares Henderson-Hasselbalch fit.
pub fn fit_hh(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 2)?;
    let sol = levenberg_marquardt(
        |p, r, j| {
            for (i, &(ph, x)) in points.iter().enumerate() {
                let (y, dy) = logistic(p[0], 1.0, ph);
                r[i] = y - x;
                j[(i, 0)] = -LN_10 * dy;
            }
        },
        &[initial_pka(points)],
        points.len(),
        &LmOptions::default(),
    )?;
    Ok(finish(&sol.params.clone(), sol))
}

/// Least-squares Hill fit of pKa and cooperativity n.
pub fn fit_hill(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 3)?;
    let sol = levenberg_marquardt(
        |p, r, j| {
            for (i, &(ph, x)) in points.iter().enumerate() {
                let (y, dy) = logistic(p[0], p[1], ph);
                r[i] = y - x;
                j[(i, 0)] = -LN_10 * p[1] * dy;
                j[(i, 1)] = -LN_10 * (p[0] - ph) * dy;
            }
        },
        &[initial_pka(points), 1.0],
        points.len(),
        &LmOptions::default(),
    )?;
    Ok(finish(&sol.params.clone(), sol))
}

pub fn fit(kind: FitKind, points: &[(f64, f64)]) -> Result<FitResult> {
    match kind {
        FitKind::HendersonHasselbalch => fit_hh(points),
        FitKind::Hill => fit_hill(points),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TitrationCell {
    pub replica: usize,
    pub n: usize,
    pub n_deprot: usize,
    pub n_censored: usize,
}

impl TitrationCell {
    pub fn fraction(&self) -> f64 {
        self.n_deprot as f64 / self.n as f64
    }
}

/// One trajectory together with the pH and replica it was run at.
#[derive(Debug, Clone, Copy)]
pub struct Run<'a> {
    pub ph: f64,
    pub replica: usize,
    pub trajectory: &'a LambdaTrajectory,
}

/// Per-(pH, replica) counts for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationDataset {
    pub site: String,
    pub ph: Vec<f64>,
    /// cells[k] holds the replicas at ph[k].
    pub cells: Vec<Vec<TitrationCell>>,
}

impl TitrationDataset {
    pub fn new(site: impl Into<String>) -> Self {
        Self { site: site.into(), ph: Vec::new(), cells: Vec::new() }
    }

    /// Adds a cell, keeping the pH list sorted. Cells with no frames are rejected.
    pub fn push(&mut self, ph: f64, cell: TitrationCell) -> Result<()> {
        if cell.n == 0 {
            return Err(Error::EmptyData(format!("site {} pH {ph} replica {}: no uncensored frames", self.site, cell.replica)));
        }
        let k = match self.ph.iter().position(|&p| p == ph) {
            Some(k) => k,
            None => {
                let k = self.ph.partition_point(|&p| p < ph);
                self.ph.insert(k, ph);
                self.cells.insert(k, Vec::new());
                k
            }
        };
        self.cells[k].push(cell);
        Ok(())
    }

    pub fn from_runs(site: &str, runs: &[Run]) -> Result<Self> {
        let mut ds = Self::new(site);
        for run in runs {
            let t = run.trajectory;
            let s = t.site_index(site).ok_or_else(|| Error::InvalidInput(format!("site {site} missing from trajectory")))?;
            let (n, dep) = count_deprotonated(&t.lambda_p[s], &t.censored[s]);
            let n_censored = t.n_frames() - n;
            ds.push(run.ph, TitrationCell { replica: run.replica, n, n_deprot: dep, n_censored })?;
        }
        Ok(ds)
    }

    /// Every (pH, replica fraction) pair.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.ph.iter().zip(&self.cells).flat_map(|(&ph, cs)| cs.iter().map(move |c| (ph, c.fraction()))).collect()
    }

    /// One point per pH with frames pooled over replicas.
    pub fn pooled_points(&self) -> Vec<(f64, f64)> {
        self.ph
            .iter()
            .zip(&self.cells)
            .map(|(&ph, cs)| {
                let n: usize = cs.iter().map(|c| c.n).sum();
                let d: usize = cs.iter().map(|c| c.n_deprot).sum();
                (ph, d as f64 / n as f64)
            })
            .collect()
    }

    pub fn mean_fractions(&self) -> Vec<(f64, f64)> {
        self.ph
            .iter()
            .zip(&self.cells)
            .map(|(&ph, cs)| (ph, cs.iter().map(TitrationCell::fraction).sum::<f64>() / cs.len() as f64))
            .collect()
    }
}

/// Microscopic-pKa datasets (δ, ε) for a tautomeric site, with
/// x_δ = N(deprot, λt < 0.5) / (N(prot) + N(deprot, λt < 0.5)) and the
/// ε analogue. Cells without any counted frame are left out.
pub fn micro_datasets(site: &str, runs: &[Run]) -> Result<(TitrationDataset, TitrationDataset)> {
    let mut delta = TitrationDataset::new(format!("{site}:delta"));
    let mut eps = TitrationDataset::new(format!("{site}:epsilon"));
    for run in runs {
        let t = run.trajectory;
        let s = t.site_index(site).ok_or_else(|| Error::InvalidInput(format!("site {site} missing from trajectory")))?;
        let (mut prot, mut d, mut e, mut cens) = (0usize, 0usize, 0usize, 0usize);
        for f in 0..t.n_frames() {
            if t.censored[s][f] {
                cens += 1;
            } else if !classify(t.lambda_p[s][f]).is_deprotonated() {
                prot += 1;
            } else if t.lambda_t[s][f] < 0.5 {
                d += 1;
            } else {
                e += 1;
            }
        }
        for (ds, k) in [(&mut delta, d), (&mut eps, e)] {
            if prot + k > 0 {
                ds.push(run.ph, TitrationCell { replica: run.replica, n: prot + k, n_deprot: k, n_censored: cens })?;
            }
        }
    }
    Ok((delta, eps))
}

/// H-H fits of the two microscopic datasets: (pKa_δ, pKa_ε).
pub fn micro_pkas(site: &str, runs: &[Run]) -> Result<(FitResult, FitResult)> {
    let (d, e) = micro_datasets(site, runs)?;
    let fit_one = |ds: &TitrationDataset| -> Result<FitResult> {
        let pts = ds.points();
        if pts.iter().all(|p| p.1 == 0.0) {
            return Err(Error::Unidentifiable(format!("{}: tautomer never occupied", ds.site)));
        }
        fit_hh(&pts)
    };
    Ok((fit_one(&d)?, fit_one(&e)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: FitResult,
    pub pka_lo: f64,
    pub pka_hi: f64,
    pub n_lo: f64,
    pub n_hi: f64,
    pub iterations: usize,
    pub failures: usize,
    /// More than 10% of the resampled fits failed.
    pub unstable: bool,
}

pub const DEFAULT_BOOTSTRAP: usize = 5000;

/// Linear-interpolation percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn resample_fit(ds: &TitrationDataset, kind: FitKind, seed: u64, iteration: usize, pooled: bool) -> Option<FitResult> {
    let mut r = rng::stream(seed, &[iteration as u64]);
    let mut pts = Vec::with_capacity(ds.cells.iter().map(Vec::len).sum());
    for (&ph, cs) in ds.ph.iter().zip(&ds.cells) {
        let (mut n, mut d) = (0usize, 0usize);
        for _ in 0..cs.len() {
            let c = &cs[r.random_range(0..cs.len())];
            if pooled {
                n += c.n;
                d += c.n_deprot;
            } else {
                pts.push((ph, c.fraction()));
            }
        }
        if pooled {
            pts.push((ph, d as f64 / n as f64));
        }
    }
    fit(kind, &pts).ok()
}

/// Percentile bootstrap over replicas: per pH the replica fractions are
/// resampled with replacement and the curve refitted.
pub fn bootstrap_ci(ds: &TitrationDataset, kind: FitKind, iterations: usize, seed: u64) -> Result<BootstrapResult> {
    bootstrap(ds, kind, iterations, seed, false)
}

/// As [`bootstrap_ci`], but each resample is pooled into one fraction per
/// pH before fitting (for sparse cells such as FMA bins).
pub fn bootstrap_pooled_ci(ds: &TitrationDataset, kind: FitKind, iterations: usize, seed: u64) -> Result<BootstrapResult> {
    bootstrap(ds, kind, iterations, seed, true)
}

fn bootstrap(ds: &TitrationDataset, kind: FitKind, iterations: usize, seed: u64, pooled: bool) -> Result<BootstrapResult> {
    if ds.cells.iter().any(|c| c.len() < 2) {
        return Err(Error::InsufficientData("bootstrap needs at least 2 replicas at every pH".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one iteration".into()));
    }
    let estimate = fit(kind, &if pooled { ds.pooled_points() } else { ds.points() })?;
    #[cfg(feature = "parallel")]
    let fits: Vec<Option<FitResult>> = {
        use rayon::prelude::*;
        (0..iterations).into_par_iter().map(|i| resample_fit(ds, kind, seed, i, pooled)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Option<FitResult>> = (0..iterations).map(|i| resample_fit(ds, kind, seed, i, pooled)).collect();
    let ok: Vec<FitResult> = fits.into_iter().flatten().collect();
    let failures = iterations - ok.len();
    if ok.is_empty() {
        return Err(Error::Unidentifiable("every bootstrap fit failed".into()));
    }
    let mut pk: Vec<f64> = ok.iter().map(|f| f.pka).collect();
    let mut nn: Vec<f64> = ok.iter().map(|f| f.hill_n).collect();
    pk.sort_by(f64::total_cmp);
    nn.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        estimate,
        pka_lo: percentile_sorted(&pk, 0.025),
        pka_hi: percentile_sorted(&pk, 0.975),
        n_lo: percentile_sorted(&nn, 0.025),
        n_hi: percentile_sorted(&nn, 0.975),
        iterations,
        failures,
        unstable: failures * 10 > iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn grid(pka: f64, n: f64) -> Vec<(f64, f64)> {
        (0..7).map(|i| pka - 1.5 + 0.5 * i as f64).map(|ph| (ph, hill_curve(pka, n, ph))).collect()
    }

    #[test]
    fn fraction_examples() {
        assert_eq!(deprotonation_fraction(&[0.9; 4], &[false; 4]).unwrap(), 1.0);
        let lp = [0.9, 0.8, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        assert!((deprotonation_fraction(&lp, &[false; 10]).unwrap() - 0.3).abs() < 1e-15);
        let cens = [true, true, false, false, false, false, false, false, false, false];
        assert!((deprotonation_fraction(&lp, &cens).unwrap() - 0.125).abs() < 1e-15);
        assert!(matches!(deprotonation_fraction(&lp, &[true; 10]), Err(Error::EmptyData(_))));
    }

    #[test]
    fn hh_recovers_exact_curve() {
        let f = fit_hh(&grid(4.0, 1.0)).unwrap();
        assert!((f.pka - 4.0).abs() < 1e-6);
        assert!(f.gradient_norm < 1e-8);
        assert!((f.curve(f.pka) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hill_recovers_exact_curve() {
        let f = fit_hill(&grid(4.04, 0.8)).unwrap();
        assert!((f.pka - 4.04).abs() < 1e-4 && (f.hill_n - 0.8).abs() < 1e-4);
        let g = fit_hill(&grid(4.0, 1.0)).unwrap();
        let h = fit_hh(&grid(4.0, 1.0)).unwrap();
        assert!((g.pka - h.pka).abs() < 1e-8 && (g.hill_n - 1.0).abs() < 1e-8);
    }

    #[test]
    fn hh_with_noise() {
        let mut errs: Vec<f64> = (0..41)
            .map(|seed| {
                let mut r = rng::stream(seed, &[]);
                let noise = Normal::new(0.0, 0.02).unwrap();
                let pts: Vec<(f64, f64)> =
                    grid(4.0, 1.0).into_iter().map(|(p, x)| (p, (x + noise.sample(&mut r)).clamp(0.0, 1.0))).collect();
                (fit_hh(&pts).unwrap().pka - 4.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[20] < 0.05);
    }

    #[test]
    fn constant_data_is_unidentifiable() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fit_hh(&pts), Err(Error::Unidentifiable(_))));
        assert!(matches!(fit_hill(&pts), Err(Error::Unidentifiable(_))));
        assert!(matches!(fit_hh(&[(1.0, 0.2), (1.0, 0.4)]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fitted_curve_is_increasing() {
        let f = fit_hh(&grid(5.0, 1.0)).unwrap();
        let ys: Vec<f64> = (0..100).map(|i| f.curve(2.0 + 0.06 * i as f64)).collect();
        assert!(ys.windows(2).all(|w| w[1] > w[0]));
    }

    fn dataset_from(points: &[(f64, Vec<f64>)]) -> TitrationDataset {
        let mut ds = TitrationDataset::new("s");
        for (ph, xs) in points {
            for (r, x) in xs.iter().enumerate() {
                let n = 10_000;
                ds.push(*ph, TitrationCell { replica: r, n, n_deprot: (x * n as f64).round() as usize, n_censored: 0 }).unwrap();
            }
        }
        ds
    }

    #[test]
    fn identical_replicas_zero_width() {
        let pts: Vec<(f64, Vec<f64>)> = grid(4.0, 1.0).into_iter().map(|(p, x)| (p, vec![x; 4])).collect();
        let b = bootstrap_ci(&dataset_from(&pts), FitKind::HendersonHasselbalch, 200, 1).unwrap();
        assert!((b.pka_hi - b.pka_lo).abs() < 1e-9);
        assert!(b.pka_lo <= b.estimate.pka + 1e-9 && b.estimate.pka <= b.pka_hi + 1e-9);
        assert!(!b.unstable);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let pts: Vec<(f64, Vec<f64>)> =
            grid(4.0, 1.0).into_iter().map(|(p, x)| (p, vec![(x - 0.03).max(0.0), x, (x + 0.03).min(1.0)])).collect();
        let ds = dataset_from(&pts);
        let a = bootstrap_ci(&ds, FitKind::Hill, 300, 9).unwrap();
        let b = bootstrap_ci(&ds, FitKind::Hill, 300, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.pka_hi > a.pka_lo);
    }

    #[test]
    fn bootstrap_needs_replicas() {
        let pts: Vec<(f64, Vec<f64>)> = grid(4.0, 1.0).into_iter().map(|(p, x)| (p, vec![x])).collect();
        assert!(bootstrap_ci(&dataset_from(&pts), FitKind::HendersonHasselbalch, 10, 1).is_err());
    }

    #[test]
    fn dataset_sorts_ph() {
        let mut ds = TitrationDataset::new("s");
        for ph in [5.0, 3.0, 4.0, 3.0] {
            ds.push(ph, TitrationCell { replica: 0, n: 1, n_deprot: 0, n_censored: 0 }).unwrap();
        }
        assert_eq!(ds.ph, vec![3.0, 4.0, 5.0]);
        assert_eq!(ds.cells[0].len(), 2);
    }
}
