//! End-to-end acceptance suite against closed-form and quadrature oracles.
//! Prints one PASS/FAIL line per criterion; `ACCEPTANCE_ONLY=1,4` runs a subset.

use cph_core::bias::{CalibrationPolynomial, DoubleWellSpline};
use cph_core::calibration::{fit_calibration_poly, sample_ti_grid, ReferenceModel, GRID_LAMBDAS};
use cph_core::config::RunConfig;
use cph_core::coupling::{coupling_screen, fit_macroscopic_two, joint_counts, coupling_free_energy, paired_bits};
use cph_core::dbo::DboSettings;
use cph_core::dynamics::{run_replica, LambdaSite, LambdaSystem, LatentChain, ReplicaOutput};
use cph_core::fma::{binned_titration, fit_fma, percentile_bins, ReplicaFrames};
use cph_core::pfc::apply_pfc;
use cph_core::titration::{bootstrap_ci, fit_hh, fit_hill, FitKind, Run, TitrationCell, TitrationDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const T: f64 = 300.0;
const R: f64 = 8.314e-3;

fn kt() -> f64 {
    R * T
}

fn ln10_kt() -> f64 {
    std::f64::consts::LN_10 * kt()
}

fn hh(pka: f64, ph: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(pka - ph))
}

fn site(id: &str, pka: f64, barrier: f64) -> LambdaSite {
    let mut s = LambdaSite::new(id, pka);
    s.bias.spline.set_barrier_height(barrier).unwrap();
    s
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

struct Cell {
    ph: f64,
    replica: usize,
    out: ReplicaOutput,
}

fn run_cells(system: &LambdaSystem, phs: &[f64], reps: usize, steps: u64, stride: u64, dbo: Option<&DboSettings>, seed: u64) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (p, &ph) in phs.iter().enumerate() {
        for r in 0..reps {
            let cfg = RunConfig { n_steps: steps, output_stride: stride, ph, seed: seed * 1_000_003 + (p * 1000 + r) as u64, ..Default::default() };
            cells.push(Cell { ph, replica: r, out: run_replica(system, &cfg, dbo).unwrap() });
        }
    }
    cells
}

fn runs(cells: &[Cell]) -> Vec<Run<'_>> {
    cells.iter().map(|c| Run { ph: c.ph, replica: c.replica, trajectory: &c.out.trajectory }).collect()
}

fn dataset(cells: &[Cell], site: &str) -> TitrationDataset {
    TitrationDataset::from_runs(site, &runs(cells)).unwrap()
}

/// Simpson's rule on a uniform grid of 2n panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (2 * n) as f64;
    let mut s = f(a) + f(b);
    for k in 1..2 * n {
        s += f(a + h * k as f64) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1. Single-site λ distribution against the quadrature density.
fn boltzmann_fidelity() -> Outcome {
    let sys = LambdaSystem::new(vec![site("a", 4.0, 1.0)]);
    let cfg = RunConfig { n_steps: 5_000_000, output_stride: 10, ph: 4.3, seed: 101, ..Default::default() };
    let out = run_replica(&sys, &cfg, None).unwrap();
    let bias = out.final_system.sites[0].bias.clone();
    let v = |x: f64| bias.eval(x, 0.0).0;
    let (lo, hi) = (-0.25, 1.25);
    let vmin = grid(lo, hi, 1e-4).into_iter().map(v).fold(f64::INFINITY, f64::min);
    let w = |x: f64| (-(v(x) - vmin) / kt()).exp();
    let z = simpson(w, lo, hi, 20_000);
    let mut xs = out.trajectory.lambda_p[0].clone();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut dev: f64 = 0.0;
    for x in grid(-0.15, 1.15, 0.01) {
        let cdf = simpson(w, lo, x, 2_000) / z;
        let ecdf = xs.partition_point(|&s| s <= x) as f64 / n;
        dev = dev.max((cdf - ecdf).abs());
    }
    outcome(dev < 0.02, format!("max CDF deviation {dev:.4} over {} frames (< 0.02)", xs.len()))
}

// 2. Reference compounds titrate back to their own pKa.
fn reference_self_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, (id, pka)) in [("asp", 4.00), ("glu", 4.40), ("his", 6.38)].into_iter().enumerate() {
        let sys = LambdaSystem::new(vec![site(id, pka, 6.0)]);
        let cells = run_cells(&sys, &grid(pka - 1.0, pka + 1.0, 0.5), 10, 2_000_000, 250, Some(&DboSettings::default()), 200 + k as u64);
        let fit = fit_hh(&dataset(&cells, id).points()).unwrap();
        worst = worst.max((fit.pka - pka).abs());
        parts.push(format!("{id} {:.3}", fit.pka));
    }
    outcome(worst <= 0.05, format!("{} (max error {worst:.3}, tolerance 0.05)", parts.join(", ")))
}

// 3. His tautomers: macroscopic pKa and the deprotonated δ:ε ratio.
fn tautomer_identity() -> Outcome {
    let (pd, pe) = (6.53, 6.92);
    let macro_oracle = -(10f64.powf(-pd) + 10f64.powf(-pe)).log10();
    let ratio_oracle = 10f64.powf(pe - pd);
    let sys = LambdaSystem::new(vec![LambdaSite::tautomeric("his", pd, pe)]);
    let cells = run_cells(&sys, &grid(5.4, 7.4, 0.5), 10, 2_000_000, 250, Some(&DboSettings::default()), 300);
    let fit = fit_hh(&dataset(&cells, "his").points()).unwrap();
    let (mut d, mut e) = (0usize, 0usize);
    for c in &cells {
        let t = &c.out.trajectory;
        for f in 0..t.n_frames() {
            if !t.censored[0][f] && t.lambda_p[0][f] >= 0.5 {
                if t.lambda_t[0][f] < 0.5 {
                    d += 1;
                } else {
                    e += 1;
                }
            }
        }
    }
    let ratio = d as f64 / e as f64;
    let pass = (fit.pka - macro_oracle).abs() <= 0.05 && (ratio / ratio_oracle - 1.0).abs() <= 0.10;
    outcome(
        pass,
        format!("macro pKa {:.3} (oracle {macro_oracle:.3} ± 0.05), δ:ε {ratio:.3} (oracle {ratio_oracle:.3} ± 10%)", fit.pka),
    )
}

// 4. A linear environment shift w moves the pKa by w / (ln10·kT).
fn environment_shift() -> Outcome {
    const SITES: usize = 8;
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, w) in [ln10_kt(), -ln10_kt()].into_iter().enumerate() {
        let expect = 4.0 + w / ln10_kt();
        let mut sys = LambdaSystem::new((0..SITES).map(|i| site(&format!("s{i}"), 4.0, 13.0)).collect());
        sys.env.shifts = vec![w; SITES];
        let cells = run_cells(&sys, &grid(expect - 0.5, expect + 0.5, 0.25), 4, 10_000_000, 250, None, 400 + k as u64);
        let mut ds = TitrationDataset::new("pooled");
        for c in &cells {
            for i in 0..SITES {
                let t = &c.out.trajectory;
                let dep = t.lambda_p[i].iter().filter(|&&l| l >= 0.5).count();
                ds.push(c.ph, TitrationCell { replica: c.replica * SITES + i, n: t.n_frames(), n_deprot: dep, n_censored: 0 }).unwrap();
            }
        }
        let shift = fit_hh(&ds.points()).unwrap().pka - 4.0;
        pass &= (shift - (expect - 4.0)).abs() <= 0.05;
        parts.push(format!("w = {w:+.3} → ΔpKa {shift:+.3}"));
    }
    outcome(pass, format!("{} (target ±1.00 ± 0.05)", parts.join(", ")))
}

// 5. PFC with 2:1 wells: quadrature free energy and sampled populations.
fn pfc_exactness() -> Outcome {
    let beta = 1.0 / kt();
    let spline = DoubleWellSpline::with_widths(3.0, 0.15, 0.075);
    let target = 0.4 * ln10_kt();
    let res = apply_pfc(&spline, target, beta, 1e-4).unwrap();
    let v = |x: f64| res.adjusted_spline.eval(x).0;
    let (lo, hi) = (-0.25, 1.25);
    let zp = simpson(|x| (-beta * v(x)).exp(), lo, 0.5, 40_000);
    let zd = simpson(|x| (-beta * v(x)).exp(), 0.5, hi, 40_000);
    let dg = -(zd / zp).ln() / beta;
    let dg_err = (dg - target).abs();

    let mut s = LambdaSite::new("a", 4.0);
    s.bias.spline = spline;
    let sys = LambdaSystem::new(vec![s]);
    let ph = 4.3;
    let cells = run_cells(&sys, &[ph], 4, 5_000_000, 50, None, 500);
    let pooled = dataset(&cells, "a").pooled_points()[0].1;
    let pop_err = (pooled - hh(4.0, ph)).abs();
    outcome(
        dg_err <= 1e-4 && pop_err <= 0.01,
        format!("|ΔG − target| {dg_err:.2e} (≤ 1e-4), deprotonated {pooled:.4} vs H-H {:.4} (± 0.01)", hh(4.0, ph)),
    )
}

fn ci_widths(cells: &[Cell], site: &str, prefixes: &[usize], seed: u64) -> Vec<f64> {
    prefixes
        .iter()
        .map(|&frames| {
            let mut ds = TitrationDataset::new(site);
            for c in cells {
                let t = &c.out.trajectory;
                let (n, dep) = (0..frames.min(t.n_frames()))
                    .filter(|&f| !t.censored[0][f])
                    .fold((0, 0), |(n, d), f| (n + 1, d + usize::from(t.lambda_p[0][f] >= 0.5)));
                ds.push(c.ph, TitrationCell { replica: c.replica, n, n_deprot: dep, n_censored: frames - n }).unwrap();
            }
            let b = bootstrap_ci(&ds, FitKind::HendersonHasselbalch, 1000, seed).unwrap();
            b.pka_hi - b.pka_lo
        })
        .collect()
}

// Frames until the repetition-averaged CI width first drops to 0.03. A single
// five-replica bootstrap width scatters by about a third, so one run cannot
// rank two samplers.
fn ci_width_budget(system: &LambdaSystem, dbo: Option<&DboSettings>, seed: u64) -> Option<usize> {
    let (steps, repetitions) = (20_000_000, 3);
    let phs = grid(3.0, 5.0, 0.5);
    let prefixes: Vec<usize> = (1..=20).map(|k| k * (steps / 250 / 20) as usize).collect();
    let mut mean = vec![0.0; prefixes.len()];
    for k in 0..repetitions {
        let cells = run_cells(system, &phs, 5, steps, 250, dbo, seed + 10 * k);
        for (m, w) in mean.iter_mut().zip(ci_widths(&cells, "s", &prefixes, seed + 10 * k + 1)) {
            *m += w / repetitions as f64;
        }
    }
    mean.iter().position(|&w| w <= 0.03).map(|i| prefixes[i])
}

// 6. DBO keeps the in-transition fraction in band without moving pKas,
// and converges no slower than a fixed barrier.
fn dbo_regulation_and_neutrality() -> Outcome {
    let dbo = DboSettings::default();
    let pkas: Vec<f64> = grid(3.0, 6.5, 0.5);

    let (mut in_band, mut total) = (0usize, 0usize);
    for (k, &pka) in pkas.iter().enumerate() {
        let sys = LambdaSystem::new(vec![site("s", pka, 6.0)]);
        let cfg = RunConfig { n_steps: 20_000_000, ph: pka, seed: 600 + k as u64, ..Default::default() };
        let out = run_replica(&sys, &cfg, Some(&dbo)).unwrap();
        let blocks = &out.barrier_blocks;
        let Some(first) = blocks.iter().position(|b| b.old == b.new) else { continue };
        for b in &blocks[first + 1..] {
            total += 1;
            in_band += usize::from((0.20..=0.30).contains(&b.fraction));
        }
    }
    let band_share = if total > 0 { in_band as f64 / total as f64 } else { 0.0 };

    let (mut with, mut without) = (Vec::new(), Vec::new());
    for (k, &pka) in pkas.iter().enumerate() {
        let sys = LambdaSystem::new(vec![site("s", pka, 6.0)]);
        let phs = grid(pka - 1.0, pka + 1.0, 0.5);
        let a = run_cells(&sys, &phs, 5, 2_000_000, 250, Some(&dbo), 700 + k as u64);
        let b = run_cells(&sys, &phs, 5, 2_000_000, 250, None, 800 + k as u64);
        with.push(fit_hh(&dataset(&a, "s").points()).unwrap().pka);
        without.push(fit_hh(&dataset(&b, "s").points()).unwrap().pka);
    }
    let r = pearson(&with, &without);
    let mad = with.iter().zip(&without).map(|(a, b)| (a - b).abs()).sum::<f64>() / with.len() as f64;

    let sys = LambdaSystem::new(vec![site("s", 4.0, 6.0)]);
    let budget_dbo = ci_width_budget(&sys, Some(&dbo), 900);
    let budget_fixed = ci_width_budget(&sys, None, 905);
    let faster = match (budget_dbo, budget_fixed) {
        (Some(d), Some(f)) => d <= f,
        (Some(_), None) => true,
        _ => false,
    };
    let show = |b: Option<usize>| b.map_or("not reached".to_string(), |f| format!("{:.0} ps", f as f64 * 0.5));
    outcome(
        band_share >= 0.8 && r >= 0.99 && mad <= 0.15 && faster,
        format!(
            "{in_band}/{total} blocks in [0.20, 0.30] ({:.0}%, ≥ 80%), Pearson {r:.4} (≥ 0.99), mean |Δ| {mad:.3} (≤ 0.15), \
             CI 0.03 after {} with DBO vs {} fixed",
            100.0 * band_share,
            show(budget_dbo),
            show(budget_fixed)
        ),
    )
}

// 7. Two independent sites: unit Hill slopes and no mutual information.
fn uncoupled_pair() -> Outcome {
    let sys = LambdaSystem::new(vec![site("a", 4.0, 6.0), site("b", 4.6, 6.0)]);
    let cells = run_cells(&sys, &grid(2.5, 6.0, 0.5), 10, 2_000_000, 250, None, 1000);
    let na = fit_hill(&dataset(&cells, "a").points()).unwrap().hill_n;
    let nb = fit_hill(&dataset(&cells, "b").points()).unwrap().hill_n;
    let screen = coupling_screen(&runs(&cells)).unwrap();
    let max_nmi = screen.pairs[0].mean_nmi.iter().copied().fold(0.0, f64::max);
    let pass = (na - 1.0).abs() <= 0.05 && (nb - 1.0).abs() <= 0.05 && max_nmi < 0.1;
    outcome(pass, format!("Hill n {na:.3}, {nb:.3} (1.00 ± 0.05), max NMI {max_nmi:.4} (< 0.1)"))
}

/// Macroscopic pKas from the four-microstate binding polynomial
/// Z = 1 + 2x + x²·e^(−βJ), x = 10^(pH − pKa).
fn macro_oracle(pka: f64, j: f64) -> (f64, f64) {
    let k1 = 2.0 * 10f64.powf(-pka);
    let k1k2 = 10f64.powf(-2.0 * pka) * (-j / kt()).exp();
    (-k1.log10(), -(k1k2 / k1).log10())
}

fn macro_fit(pairs: usize, j: f64, barrier: f64, phs: &[f64], steps: u64, seed: u64) -> (f64, f64) {
    let mut sys = LambdaSystem::new((0..2 * pairs).map(|i| site(&format!("s{i}"), 4.0, barrier)).collect());
    for p in 0..pairs {
        sys.env.set_coupling(2 * p, 2 * p + 1, j);
    }
    let cells = run_cells(&sys, phs, 4, steps, 250, None, seed);
    let mut points = Vec::new();
    for c in &cells {
        let t = &c.out.trajectory;
        let f = |i: usize| t.lambda_p[i].iter().filter(|&&l| l >= 0.5).count() as f64 / t.n_frames() as f64;
        for p in 0..pairs {
            points.push((c.ph, 2.0 - f(2 * p) - f(2 * p + 1)));
        }
    }
    let fit = fit_macroscopic_two(&points).unwrap();
    (fit.pka1, fit.pka2)
}

// 8. Coupled pair: flagged by the screen, macroscopic pKas against the
// microstate oracle; identical independent sites split by log10(2).
fn coupled_pair() -> Outcome {
    let j = 8.0;
    let (o1, o2) = macro_oracle(4.0, j);
    let (p1, p2) = macro_fit(4, j, 13.0, &grid(2.5, 7.0, 0.5), 5_000_000, 1100);
    let (i1, i2) = macro_oracle(4.0, 0.0);
    let (q1, q2) = macro_fit(4, 0.0, 6.0, &grid(2.5, 5.5, 0.5), 2_000_000, 1200);

    // screen on the pair plus an independent third site at the default barrier
    let mut sys = LambdaSystem::new(vec![site("a", 4.0, 6.0), site("b", 4.0, 6.0), site("c", 4.5, 6.0)]);
    sys.env.set_coupling(0, 1, j);
    let cells = run_cells(&sys, &grid(2.5, 7.0, 0.5), 4, 2_000_000, 250, None, 1250);
    let screen = coupling_screen(&runs(&cells)).unwrap();
    let flagged: Vec<(usize, usize)> = screen.flagged().map(|p| (p.i, p.j)).collect();
    let screen_ok = flagged == [(0, 1)];

    let pass = screen_ok
        && (p1 - o1).abs() <= 0.10
        && (p2 - o2).abs() <= 0.10
        && (q1 - i1).abs() <= 0.05
        && (q2 - i2).abs() <= 0.05;
    outcome(
        pass,
        format!(
            "flagged pairs {flagged:?} (want [(0, 1)]), J = 8: {p1:.3}/{p2:.3} vs oracle {o1:.3}/{o2:.3} (± 0.10), \
             J = 0: {q1:.3}/{q2:.3} vs {i1:.3}/{i2:.3} (± 0.05)"
        ),
    )
}

// 9. Coupling free energy from joint populations.
fn coupling_free_energy_check() -> Outcome {
    const PAIRS: usize = 4;
    let (j, pka) = (3.0, 4.0);
    let mut sys = LambdaSystem::new((0..2 * PAIRS).map(|i| site(&format!("s{i}"), pka, 13.0)).collect());
    for p in 0..PAIRS {
        sys.env.set_coupling(2 * p, 2 * p + 1, j);
    }
    let stride = 500;
    let frames_per_pair = 1_000_000 / PAIRS;
    let reps = 4;
    let steps = (frames_per_pair / reps) as u64 * stride;
    let cells = run_cells(&sys, &[pka], reps, steps, stride, None, 1300);
    let mut counts = [[0usize; 2]; 2];
    let mut frames = 0;
    for run in runs(&cells) {
        for p in 0..PAIRS {
            let (x, y) = paired_bits(&run, 2 * p, 2 * p + 1);
            let c = joint_counts(&x, &y).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    counts[a][b] += c[a][b];
                }
            }
            frames += x.len();
        }
    }
    let est = coupling_free_energy(&counts, true, true, T).unwrap();
    // closed form from the four microstate weights at pH = pKa
    let w = [[1.0, 1.0], [1.0, (-j / kt()).exp()]];
    let z: f64 = w.iter().flatten().sum();
    let p11 = w[1][1] / z;
    let p1 = (w[1][0] + w[1][1]) / z;
    let exact = kt() * (p11 / (p1 * p1)).ln();
    let err = (est - exact).abs();
    outcome(err <= 0.2, format!("{est:.3} kJ/mol vs closed form {exact:.3} over {frames} frames (± 0.2)"))
}

fn fma_system(shift: f64) -> LambdaSystem {
    let mut sys = LambdaSystem::new(vec![site("a", 4.0, 12.0)]);
    sys.env.chains.push(LatentChain {
        k01: 0.0002,
        k10: 0.0002,
        shifts: [vec![0.0], vec![shift]],
        mu: [vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]],
        sigma_feat: 0.2,
        initial_state: 0,
    });
    sys
}

struct FmaRun {
    r2_validation: f64,
    bin_pkas: Vec<f64>,
}

fn fma_pipeline(sys: &LambdaSystem, seed: u64) -> FmaRun {
    let cells = run_cells(sys, &grid(3.0, 6.5, 0.5), 5, 20_000_000, 250, None, seed);
    let rs = runs(&cells);
    let ds = dataset(&cells, "a");
    let training_ph = ds
        .pooled_points()
        .into_iter()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .unwrap()
        .0;
    let data: Vec<ReplicaFrames> = rs
        .iter()
        .filter(|r| r.ph == training_ph)
        .map(|r| {
            let t = r.trajectory;
            let keep: Vec<usize> = (0..t.n_frames()).filter(|&f| !t.censored[0][f]).collect();
            ReplicaFrames {
                replica: r.replica,
                features: keep.iter().map(|&f| t.features[f].clone()).collect(),
                y: keep.iter().map(|&f| t.lambda_p[0][f]).collect(),
            }
        })
        .collect();
    let fit = fit_fma(&data, 20).unwrap();
    let projections: Vec<Vec<f64>> = rs.iter().map(|r| fit.model.project(&r.trajectory.features).unwrap()).collect();
    let pooled: Vec<f64> = projections.iter().flatten().copied().collect();
    let binning = percentile_bins(&pooled).unwrap();
    let bins = binned_titration(&binning, "a", &rs, &projections, 200, seed).unwrap();
    FmaRun { r2_validation: fit.r2_validation, bin_pkas: bins.iter().map(|b| b.pka.unwrap_or(f64::NAN)).collect() }
}

// 10. FMA on a two-state latent system with per-state pKas 4.0 and 5.5,
// and on a null system where the state does not touch the site.
fn fma_criterion() -> Outcome {
    let signal = fma_pipeline(&fma_system(1.5 * ln10_kt()), 1400);
    let null = fma_pipeline(&fma_system(0.0), 1500);
    let (lo, hi) = (signal.bin_pkas[0], signal.bin_pkas[5]);
    // the low-FMA end is the state with the larger λp, i.e. the lower pKa
    let (low_state, high_state) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let finite = null.bin_pkas.iter().all(|p| p.is_finite());
    let spread = null.bin_pkas.iter().copied().fold(f64::NEG_INFINITY, f64::max) - null.bin_pkas.iter().copied().fold(f64::INFINITY, f64::min);
    let r2_ok = signal.r2_validation >= 0.5;
    let bins_ok = (low_state - 4.0).abs() <= 0.15 && (high_state - 5.5).abs() <= 0.15;
    let flat = finite && spread <= 0.15;
    outcome(
        r2_ok && bins_ok && flat,
        format!(
            "validation R² {:.3} (≥ 0.5), extreme bins {low_state:.3}/{high_state:.3} (4.0/5.5 ± 0.15), null spread {spread:.3} (≤ 0.15)",
            signal.r2_validation
        ),
    )
}

// 11. Percentile bootstrap coverage on synthetic replica data.
fn bootstrap_coverage() -> Outcome {
    let truth = 4.0;
    let phs = grid(3.0, 5.0, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1600);
    let mut covered = 0;
    let trials = 200;
    for trial in 0..trials {
        let mut ds = TitrationDataset::new("syn");
        for &ph in &phs {
            let p = hh(truth, ph);
            for r in 0..8 {
                let n = 200;
                let dep = (0..n).filter(|_| rng.random::<f64>() < p).count();
                ds.push(ph, TitrationCell { replica: r, n, n_deprot: dep, n_censored: 0 }).unwrap();
            }
        }
        let b = bootstrap_ci(&ds, FitKind::HendersonHasselbalch, 1000, 1700 + trial as u64).unwrap();
        covered += usize::from(b.pka_lo <= truth && truth <= b.pka_hi);
    }
    let share = covered as f64 / trials as f64;
    outcome((0.90..=0.98).contains(&share), format!("{covered}/{trials} intervals cover the truth ({:.1}%, 90-98%)", 100.0 * share))
}

// 12. Calibration recovers the reference surface.
fn calibration_flattening() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1800);
    let mut coeffs: Vec<f64> = (0..36).map(|_| rng.random_range(-5.0..5.0)).collect();
    coeffs[0] = 0.0;
    let surface = CalibrationPolynomial::new(5, 5, coeffs.clone()).unwrap();
    let exact = ReferenceModel { surface: surface.clone(), sigma: 0.0 };
    let fit = fit_calibration_poly(&sample_ti_grid(&exact, &GRID_LAMBDAS, 1, 1).unwrap(), 5).unwrap();
    let recovery = fit.vmm.coeffs.iter().zip(&coeffs).map(|(v, c)| (v + c).abs()).fold(0.0, f64::max);

    let noisy = ReferenceModel { surface, sigma: 2.0 };
    let fits: Vec<_> =
        (0..3).map(|k| fit_calibration_poly(&sample_ti_grid(&noisy, &GRID_LAMBDAS, 200, 1900 + k).unwrap(), 5).unwrap()).collect();
    let mut worst: f64 = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            for c in 1..36 {
                let se = (fits[a].coeff_se[c].powi(2) + fits[b].coeff_se[c].powi(2)).sqrt();
                worst = worst.max((fits[a].vmm.coeffs[c] - fits[b].vmm.coeffs[c]).abs() / se);
            }
        }
    }
    outcome(
        recovery <= 1e-8 && worst <= 3.0,
        format!("noiseless max coefficient error {recovery:.1e} (≤ 1e-8), replica pairs differ by at most {worst:.2} SE (≤ 3)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("Boltzmann fidelity", boltzmann_fidelity),
        ("reference self-consistency", reference_self_consistency),
        ("tautomer identity", tautomer_identity),
        ("environment-shift law", environment_shift),
        ("PFC exactness", pfc_exactness),
        ("DBO regulation and neutrality", dbo_regulation_and_neutrality),
        ("uncoupled pair", uncoupled_pair),
        ("coupled pair", coupled_pair),
        ("coupling free energy", coupling_free_energy_check),
        ("FMA pipeline", fma_criterion),
        ("bootstrap coverage", bootstrap_coverage),
        ("calibration flattening", calibration_flattening),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {id:>2} {verdict}  {name}: {} [{:.0} s]", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
