//! Protonation coupling between sites: NMI screening, the two-proton
//! macroscopic titration model and microstate coupling free energies.

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::titration::Run;
use crate::units::{classify, kt};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;
use std::io::Write;

pub const NMI_THRESHOLD: f64 = 0.1;
pub const ENTROPY_THRESHOLD: f64 = 0.1;

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Plug-in entropy (nats) of a binary sequence.
pub fn entropy(x: &[bool]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let p = x.iter().filter(|&&b| b).count() as f64 / x.len() as f64;
    -(plogp(p) + plogp(1.0 - p))
}

/// Normalized mutual information 2·I(X;Y)/(H(X) + H(Y)); zero when both
/// entropies vanish.
pub fn nmi(x: &[bool], y: &[bool]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("sequence lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::EmptyData("empty sequences".into()));
    }
    let mut c = [[0usize; 2]; 2];
    for (&a, &b) in x.iter().zip(y) {
        c[usize::from(a)][usize::from(b)] += 1;
    }
    let n = x.len() as f64;
    let px = [(c[0][0] + c[0][1]) as f64 / n, (c[1][0] + c[1][1]) as f64 / n];
    let py = [(c[0][0] + c[1][0]) as f64 / n, (c[0][1] + c[1][1]) as f64 / n];
    let hx = -(plogp(px[0]) + plogp(px[1]));
    let hy = -(plogp(py[0]) + plogp(py[1]));
    if hx + hy == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let pij = c[i][j] as f64 / n;
            if pij > 0.0 {
                mi += pij * (pij / (px[i] * py[j])).ln();
            }
        }
    }
    Ok((2.0 * mi / (hx + hy)).clamp(0.0, 1.0))
}

/// Deprotonation bits of two sites over frames where neither is censored.
pub fn paired_bits(run: &Run, i: usize, j: usize) -> (Vec<bool>, Vec<bool>) {
    let t = run.trajectory;
    t.jointly_uncensored(&[i, j])
        .into_iter()
        .map(|f| (classify(t.lambda_p[i][f]).is_deprotonated(), classify(t.lambda_p[j][f]).is_deprotonated()))
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScreen {
    pub i: usize,
    pub j: usize,
    /// Mean NMI across replicas, one entry per pH.
    pub mean_nmi: Vec<f64>,
    pub max_nmi: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingScreenResult {
    pub sites: Vec<String>,
    pub ph: Vec<f64>,
    /// Mean entropy per site (outer) and pH (inner).
    pub mean_entropy: Vec<Vec<f64>>,
    pub pairs: Vec<PairScreen>,
}

impl CouplingScreenResult {
    pub fn flagged(&self) -> impl Iterator<Item = &PairScreen> {
        self.pairs.iter().filter(|p| p.flagged)
    }

    /// Symmetric matrix of max-over-pH mean NMI (diagonal 1).
    pub fn nmi_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.sites.len();
        let mut m = vec![vec![0.0; n]; n];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        for p in &self.pairs {
            m[p.i][p.j] = p.max_nmi;
            m[p.j][p.i] = p.max_nmi;
        }
        m
    }

    pub fn write_nmi_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["site".to_string()];
        header.extend(self.sites.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.sites.iter().zip(self.nmi_matrix()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Screens every site pair: flagged when, at some pH, the mean NMI
/// exceeds 0.1 and both mean entropies exceed 0.1 nats.
pub fn coupling_screen(runs: &[Run]) -> Result<CouplingScreenResult> {
    let first = runs.first().ok_or_else(|| Error::EmptyData("no runs".into()))?;
    let sites = first.trajectory.site_ids.clone();
    if sites.len() < 2 {
        return Err(Error::InvalidInput("coupling screen needs at least two sites".into()));
    }
    if runs.iter().any(|r| r.trajectory.site_ids != sites) {
        return Err(Error::InvalidInput("runs disagree on the site list".into()));
    }
    let mut ph: Vec<f64> = runs.iter().map(|r| r.ph).collect();
    ph.sort_by(f64::total_cmp);
    ph.dedup();
    let at = |p: f64| runs.iter().filter(move |r| r.ph == p);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mean_entropy: Vec<Vec<f64>> = (0..sites.len())
        .map(|s| ph.iter().map(|&p| mean(&at(p).map(|r| entropy(&r.trajectory.protonation_bits(s))).collect::<Vec<_>>())).collect())
        .collect();
    let mut pairs = Vec::new();
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let mut mean_nmi = Vec::with_capacity(ph.len());
            for &p in &ph {
                let mut vals = Vec::new();
                for r in at(p) {
                    let (a, b) = paired_bits(r, i, j);
                    if !a.is_empty() {
                        vals.push(nmi(&a, &b)?);
                    }
                }
                mean_nmi.push(if vals.is_empty() { 0.0 } else { mean(&vals) });
            }
            let flagged = (0..ph.len()).any(|k| {
                mean_nmi[k] > NMI_THRESHOLD && mean_entropy[i][k] > ENTROPY_THRESHOLD && mean_entropy[j][k] > ENTROPY_THRESHOLD
            });
            let max_nmi = mean_nmi.iter().copied().fold(0.0, f64::max);
            pairs.push(PairScreen { i, j, mean_nmi, max_nmi, flagged });
        }
    }
    Ok(CouplingScreenResult { sites, ph, mean_entropy, pairs })
}

/// Average number of bound protons for the two-proton model.
pub fn macroscopic_curve(pka1: f64, pka2: f64, ph: f64) -> f64 {
    macroscopic_terms(pka1, pka2, ph).0
}

/// (⟨X⟩, ∂⟨X⟩/∂pKa1, ∂⟨X⟩/∂pKa2), evaluated in log space.
fn macroscopic_terms(pka1: f64, pka2: f64, ph: f64) -> (f64, f64, f64) {
    let a = LN_10 * (pka2 - ph);
    let b = LN_10 * (pka1 + pka2 - 2.0 * ph);
    let m = a.max(b).max(0.0);
    let (e0, ea, eb) = ((-m).exp(), (a - m).exp(), (b - m).exp());
    let d = e0 + ea + eb;
    let x = (ea + 2.0 * eb) / d;
    let dxa = ea / d * (1.0 - x);
    let dxb = eb / d * (2.0 - x);
    (x, LN_10 * dxb, LN_10 * (dxa + dxb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroFit {
    pub pka1: f64,
    pub pka2: f64,
    pub sse: f64,
    pub gradient_norm: f64,
}

/// Least-squares fit of the two-proton macroscopic titration curve to
/// (pH, ⟨X⟩) points, ⟨X⟩ the mean number of bound protons.
pub fn fit_macroscopic_two(points: &[(f64, f64)]) -> Result<MacroFit> {
    if points.iter().any(|&(p, x)| !p.is_finite() || !(0.0..=2.0).contains(&x)) {
        return Err(Error::InvalidInput("need finite pH and 0 <= <X> <= 2".into()));
    }
    let mut phs: Vec<f64> = points.iter().map(|p| p.0).collect();
    phs.sort_by(f64::total_cmp);
    phs.dedup();
    if phs.len() < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 distinct pH values, got {}", phs.len())));
    }
    let mid = points.iter().min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs())).unwrap().0;
    let sol = levenberg_marquardt(
        |p, r, j| {
            for (k, &(ph, x)) in points.iter().enumerate() {
                let (y, d1, d2) = macroscopic_terms(p[0], p[1], ph);
                r[k] = y - x;
                j[(k, 0)] = d1;
                j[(k, 1)] = d2;
            }
        },
        &[mid - 0.3, mid + 0.3],
        points.len(),
        &LmOptions::default(),
    )?;
    Ok(MacroFit { pka1: sol.params[0], pka2: sol.params[1], sse: sol.sse, gradient_norm: sol.gradient_norm })
}

/// Macroscopic pKas of two sites with microscopic pKas `a`, `b` and a
/// coupling J (kJ/mol) paid when both are deprotonated.
pub fn macroscopic_pkas_exact(a: f64, b: f64, coupling: f64, temperature: f64) -> (f64, f64) {
    let bj = coupling / kt(temperature);
    let pka2 = (10f64.powf(a) + 10f64.powf(b)).log10() + bj / LN_10;
    (a + b + bj / LN_10 - pka2, pka2)
}

/// Exact probabilities of the four microstates (s1, s2), s = 1 deprotonated,
/// indexed [s1][s2].
pub fn microstate_probabilities(a: f64, b: f64, coupling: f64, ph: f64, temperature: f64) -> [[f64; 2]; 2] {
    let beta = 1.0 / kt(temperature);
    let g1 = crate::units::delta_g_chem(a, ph, temperature);
    let g2 = crate::units::delta_g_chem(b, ph, temperature);
    let mut w = [[0.0; 2]; 2];
    for (s1, row) in w.iter_mut().enumerate() {
        for (s2, v) in row.iter_mut().enumerate() {
            let (x1, x2) = (s1 as f64, s2 as f64);
            *v = (-beta * (g1 * x1 + g2 * x2 + coupling * x1 * x2)).exp();
        }
    }
    let z: f64 = w.iter().flatten().sum();
    w.map(|row| row.map(|v| v / z))
}

/// Joint counts [s1][s2] of two bit sequences.
pub fn joint_counts(x: &[bool], y: &[bool]) -> Result<[[usize; 2]; 2]> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("sequence lengths differ".into()));
    }
    let mut c = [[0usize; 2]; 2];
    for (&a, &b) in x.iter().zip(y) {
        c[usize::from(a)][usize::from(b)] += 1;
    }
    Ok(c)
}

pub const MIN_COUPLING_FRAMES: usize = 1000;

/// kT·ln(P(A1 ∧ A2) / (P(A1)·P(A2))) for the chosen states of the two
/// sites (true = deprotonated). Undefined when any joint cell is empty.
pub fn coupling_free_energy(counts: &[[usize; 2]; 2], state1: bool, state2: bool, temperature: f64) -> Result<f64> {
    let n: usize = counts.iter().flatten().sum();
    if n < MIN_COUPLING_FRAMES {
        return Err(Error::InsufficientData(format!("{n} frames, need at least {MIN_COUPLING_FRAMES}")));
    }
    if counts.iter().flatten().any(|&c| c == 0) {
        return Err(Error::Undefined("a joint microstate was never visited".into()));
    }
    let (i, j) = (usize::from(state1), usize::from(state2));
    let nf = n as f64;
    let p12 = counts[i][j] as f64 / nf;
    let p1 = (counts[i][0] + counts[i][1]) as f64 / nf;
    let p2 = (counts[0][j] + counts[1][j]) as f64 / nf;
    Ok(kt(temperature) * (p12.ln() - p1.ln() - p2.ln()))
}

/// Occupancy of the joint state (state1, state2) in consecutive
/// non-overlapping windows of `window` frames; a trailing partial window
/// is dropped.
pub fn microstate_fraction_series(x: &[bool], y: &[bool], state1: bool, state2: bool, window: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("sequence lengths differ".into()));
    }
    if window == 0 {
        return Err(Error::InvalidInput("window must hold at least one frame".into()));
    }
    Ok(x.chunks_exact(window)
        .zip(y.chunks_exact(window))
        .map(|(a, b)| a.iter().zip(b).filter(|(&p, &q)| p == state1 && q == state2).count() as f64 / window as f64)
        .collect())
}

/// Window length in frames for a window in ps; at least ten frames.
pub fn window_frames(window_ps: f64, frame_ps: f64) -> Result<usize> {
    let n = (window_ps / frame_ps).round();
    if !(n >= 10.0) {
        return Err(Error::InvalidInput(format!("window {window_ps} ps is shorter than ten frames of {frame_ps} ps")));
    }
    Ok(n as usize)
}
