//! The five subcommands. Every output is a pure function of the spec text
//! and the seed, so reruns reproduce files byte for byte.

use crate::spec::ExperimentSpec;
use crate::svg::titration_svg;
use cph_core::bias::CalibrationPolynomial;
use cph_core::calibration::{fit_calibration_poly, sample_ti_grid, ReferenceModel, GRID_LAMBDAS};
use cph_core::config::RunConfig;
use cph_core::coupling::{coupling_screen, fit_macroscopic_two, CouplingScreenResult, MacroFit};
use cph_core::dbo::{write_event_log, DboSettings};
use cph_core::dynamics::{run_replica, LambdaSystem, LambdaTrajectory};
use cph_core::fma::{binned_titration, extreme_state_means, fit_fma, percentile_bins, BinTitration, ReplicaFrames};
use cph_core::rng::derive_seed;
use cph_core::titration::{bootstrap_ci, fit, fit_hill, micro_pkas, FitKind, Run, TitrationDataset};
use cph_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub const TOOL: &str = concat!("cph ", env!("CARGO_PKG_VERSION"));

#[derive(Debug)]
pub enum CliError {
    /// Bad input: spec, missing upstream outputs, unfittable data.
    User(String),
    /// Filesystem or other failure not caused by the input.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub spec: ExperimentSpec,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub dbo: bool,
}

impl Context {
    pub fn load(spec_path: &Path, out: PathBuf, seed: Option<u64>, jobs: usize, no_dbo: bool) -> CliResult<Self> {
        let text = fs::read_to_string(spec_path)
            .map_err(|e| CliError::User(format!("cannot read spec {}: {e}", spec_path.display())))?;
        let spec = ExperimentSpec::parse(&text).map_err(|e| CliError::User(format!("{}: {e}", spec_path.display())))?;
        Ok(Self { seed: seed.unwrap_or(spec.run.seed), dbo: spec.dbo && !no_dbo, spec, out, jobs: jobs.max(1) })
    }

    fn dir(&self, name: &str) -> CliResult<PathBuf> {
        let d = self.out.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn header(&self) -> Header {
        Header { tool: TOOL.into(), spec_hash: self.spec.hash.clone(), seed: self.seed }
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build().map_err(|e| CliError::Internal(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub spec_hash: String,
    pub seed: u64,
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated output behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|_| CliError::User(format!("{} not found; {hint}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- calibrate

#[derive(Serialize)]
struct CalibrationSummary {
    #[serde(flatten)]
    header: Header,
    degree: usize,
    samples_per_point: usize,
    sites: Vec<CalibrationSite>,
}

#[derive(Serialize)]
struct CalibrationSite {
    site: String,
    file: String,
    residual_rms: f64,
    max_coeff_se: f64,
}

pub fn calibrate(ctx: &Context) -> CliResult<()> {
    let dir = ctx.dir("calibration")?;
    let deg = ctx.spec.calibration_degree;
    let mut sites = Vec::new();
    for (k, s) in ctx.spec.sites.iter().enumerate() {
        let surface = s.reference.clone().unwrap_or_else(|| CalibrationPolynomial::zero(deg, deg));
        let model = ReferenceModel { surface, sigma: s.reference_sigma };
        let grid = sample_ti_grid(&model, &GRID_LAMBDAS, ctx.spec.calibration_samples, derive_seed(ctx.seed, &[0xCA1, k as u64]))?;
        let fit = fit_calibration_poly(&grid, deg).map_err(|e| CliError::User(format!("site {}: calibration fit failed: {e}", s.id)))?;
        let file = format!("{}.json", s.id);
        write_atomic(&dir.join(&file), fit.vmm.to_json()?.as_bytes())?;
        println!("calibrated {}: residual rms {:.3e} kJ/mol", s.id, fit.residual_rms);
        sites.push(CalibrationSite {
            site: s.id.clone(),
            file,
            residual_rms: fit.residual_rms,
            max_coeff_se: fit.coeff_se.iter().copied().fold(0.0, f64::max),
        });
    }
    write_json(
        &dir.join("summary.json"),
        &CalibrationSummary { header: ctx.header(), degree: deg, samples_per_point: ctx.spec.calibration_samples, sites },
    )
}

/// The system with Vmm from `calibration/` attached where present.
fn load_system(ctx: &Context) -> CliResult<LambdaSystem> {
    let mut sys = ctx.spec.system()?;
    for site in &mut sys.sites {
        let path = ctx.out.join("calibration").join(format!("{}.json", site.id));
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            site.bias.vmm = Some(CalibrationPolynomial::from_json(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?);
        } else if site.reference.is_some() {
            return Err(CliError::User(format!("site {} has a reference profile but no {}; run `cph calibrate` first", site.id, path.display())));
        }
    }
    Ok(sys)
}

fn run_config(ctx: &Context, ph: f64, seed: u64) -> RunConfig {
    RunConfig { ph, seed, ..ctx.spec.run.clone() }
}

// ----------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulationSummary {
    #[serde(flatten)]
    header: Header,
    ph: f64,
    dbo: bool,
    frames: usize,
    adjustments: usize,
    sites: Vec<SiteFraction>,
}

#[derive(Serialize)]
struct SiteFraction {
    site: String,
    fraction: Option<f64>,
    censored: usize,
    bias_file: String,
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let sys = load_system(ctx)?;
    let grid = &ctx.spec.ph;
    let ph = ctx.spec.simulate_ph.unwrap_or(grid[grid.len() / 2]);
    let dbo = DboSettings::default();
    let out = run_replica(&sys, &run_config(ctx, ph, ctx.seed), ctx.dbo.then_some(&dbo))?;
    let dir = ctx.dir("simulate")?;
    let mut buf = Vec::new();
    out.trajectory.write_csv(&mut buf)?;
    write_atomic(&dir.join("trajectory.csv"), &buf)?;
    if ctx.dbo {
        let mut buf = Vec::new();
        write_event_log(&out.events, &mut buf)?;
        write_atomic(&dir.join("dbo_log.csv"), &buf)?;
    }
    let t = &out.trajectory;
    let mut sites = Vec::new();
    for (i, site) in out.final_system.sites.iter().enumerate() {
        let bias_file = format!("bias_{}.json", site.id);
        write_atomic(&dir.join(&bias_file), site.bias.spline.to_json()?.as_bytes())?;
        let fraction = cph_core::titration::deprotonation_fraction(&t.lambda_p[i], &t.censored[i]).ok();
        sites.push(SiteFraction { site: site.id.clone(), fraction, censored: t.censored[i].iter().filter(|&&c| c).count(), bias_file });
    }
    write_json(
        &dir.join("summary.json"),
        &SimulationSummary { header: ctx.header(), ph, dbo: ctx.dbo, frames: t.n_frames(), adjustments: out.events.len(), sites },
    )?;
    println!("simulated {} frames at pH {ph}", t.n_frames());
    Ok(())
}

// ------------------------------------------------------------------ titrate

fn cell_name(ph: f64, replica: usize) -> String {
    format!("ph{ph}_r{replica:03}.csv")
}

fn cell_seed(seed: u64, ph: f64, replica: usize) -> u64 {
    derive_seed(seed, &[ph.to_bits(), replica as u64])
}

struct Cell {
    ph: f64,
    replica: usize,
    result: Result<LambdaTrajectory, String>,
    reused: bool,
}

fn read_trajectory(path: &Path) -> CliResult<LambdaTrajectory> {
    let f = fs::File::open(path)?;
    LambdaTrajectory::read_csv(std::io::BufReader::new(f)).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// Runs (or reuses) every (pH, replica) cell. A cell counts as done when
/// its trajectory file exists, and its DBO log too when DBO is on.
fn run_cells(ctx: &Context, sys: &LambdaSystem) -> CliResult<Vec<Cell>> {
    let traj_dir = ctx.dir("trajectories")?;
    let dbo_dir = ctx.dir("dbo")?;
    let settings = DboSettings::default();
    let jobs: Vec<(f64, usize)> = ctx.spec.ph.iter().flat_map(|&ph| (0..ctx.spec.replicas).map(move |r| (ph, r))).collect();
    let run_one = |&(ph, replica): &(f64, usize)| -> CliResult<Cell> {
        let tpath = traj_dir.join(cell_name(ph, replica));
        let lpath = dbo_dir.join(cell_name(ph, replica));
        if tpath.exists() && (!ctx.dbo || lpath.exists()) {
            return Ok(Cell { ph, replica, result: Ok(read_trajectory(&tpath)?), reused: true });
        }
        let cfg = run_config(ctx, ph, cell_seed(ctx.seed, ph, replica));
        let out = match run_replica(sys, &cfg, ctx.dbo.then_some(&settings)) {
            Ok(o) => o,
            Err(e) => return Ok(Cell { ph, replica, result: Err(e.to_string()), reused: false }),
        };
        if ctx.dbo {
            let mut buf = Vec::new();
            write_event_log(&out.events, &mut buf)?;
            write_atomic(&lpath, &buf)?;
        }
        let mut buf = Vec::new();
        out.trajectory.write_csv(&mut buf)?;
        write_atomic(&tpath, &buf)?;
        Ok(Cell { ph, replica, result: Ok(out.trajectory), reused: false })
    };
    ctx.pool()?.install(|| jobs.par_iter().map(run_one).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFraction {
    pub replica: usize,
    pub fraction: f64,
    pub frames: usize,
    pub deprotonated: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhFractions {
    pub ph: f64,
    pub mean: f64,
    pub replicas: Vec<ReplicaFraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroPkas {
    #[serde(rename = "pKa_delta")]
    pub pka_delta: f64,
    #[serde(rename = "pKa_eps")]
    pub pka_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationReport {
    #[serde(flatten)]
    pub header: Header,
    pub site: String,
    pub fit: FitKind,
    #[serde(rename = "pKa")]
    pub pka: f64,
    /// Hill coefficient (from a Hill fit whatever `fit` is).
    pub n: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub bootstrap_iterations: usize,
    pub bootstrap_failures: usize,
    pub unstable: bool,
    pub micro: Option<MicroPkas>,
    pub notes: Vec<String>,
    pub fractions: Vec<PhFractions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub ph: f64,
    pub replica: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site: String,
    #[serde(rename = "pKa")]
    pub pka: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationSummary {
    #[serde(flatten)]
    pub header: Header,
    pub ph: Vec<f64>,
    pub replicas: usize,
    pub dbo: bool,
    pub failed_cells: Vec<FailedCell>,
    pub sites: Vec<SiteSummary>,
}

fn titrate_site(ctx: &Context, index: usize, runs: &[Run]) -> CliResult<TitrationReport> {
    let id = &ctx.spec.sites[index].id;
    let ds = TitrationDataset::from_runs(id, runs)?;
    let mut notes = Vec::new();
    let est = fit(ctx.spec.fit, &ds.points()).map_err(|e| CliError::User(format!("site {id}: {e}")))?;
    let n = match ctx.spec.fit {
        FitKind::Hill => Some(est.hill_n),
        FitKind::HendersonHasselbalch => match fit_hill(&ds.points()) {
            Ok(h) => Some(h.hill_n),
            Err(e) => {
                notes.push(format!("Hill fit failed: {e}"));
                None
            }
        },
    };
    let (mut ci_lo, mut ci_hi, mut iters, mut failures, mut unstable) = (None, None, 0, 0, false);
    if ctx.spec.bootstrap > 0 {
        match bootstrap_ci(&ds, ctx.spec.fit, ctx.spec.bootstrap, derive_seed(ctx.seed, &[0xB007, index as u64])) {
            Ok(b) => {
                (ci_lo, ci_hi) = (Some(b.pka_lo), Some(b.pka_hi));
                (iters, failures, unstable) = (b.iterations, b.failures, b.unstable);
            }
            Err(e) => notes.push(format!("bootstrap skipped: {e}")),
        }
    }
    let micro = if ctx.spec.sites[index].micro.is_some() {
        match micro_pkas(id, runs) {
            Ok((d, e)) => Some(MicroPkas { pka_delta: d.pka, pka_eps: e.pka }),
            Err(e) => {
                notes.push(format!("microscopic pKas unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let fractions = ds
        .ph
        .iter()
        .zip(&ds.cells)
        .map(|(&ph, cells)| PhFractions {
            ph,
            mean: cells.iter().map(|c| c.fraction()).sum::<f64>() / cells.len() as f64,
            replicas: cells
                .iter()
                .map(|c| ReplicaFraction { replica: c.replica, fraction: c.fraction(), frames: c.n, deprotonated: c.n_deprot, censored: c.n_censored })
                .collect(),
        })
        .collect();
    Ok(TitrationReport {
        header: ctx.header(),
        site: id.clone(),
        fit: ctx.spec.fit,
        pka: est.pka,
        n,
        ci_lo,
        ci_hi,
        bootstrap_iterations: iters,
        bootstrap_failures: failures,
        unstable,
        micro,
        notes,
        fractions,
    })
}

fn fractions_csv(report: &TitrationReport) -> String {
    let mut s = String::from("ph,replica,frames,deprotonated,censored,fraction\n");
    for p in &report.fractions {
        for r in &p.replicas {
            s.push_str(&format!("{},{},{},{},{},{}\n", p.ph, r.replica, r.frames, r.deprotonated, r.censored, r.fraction));
        }
    }
    s
}

pub fn titrate(ctx: &Context) -> CliResult<()> {
    let sys = load_system(ctx)?;
    let cells = run_cells(ctx, &sys)?;
    let reused = cells.iter().filter(|c| c.reused).count();
    println!("{} cells: {} run, {reused} reused", cells.len(), cells.len() - reused);

    let failed: Vec<FailedCell> = cells
        .iter()
        .filter_map(|c| c.result.as_ref().err().map(|e| FailedCell { ph: c.ph, replica: c.replica, error: e.clone() }))
        .collect();
    for f in &failed {
        eprintln!("cell pH {} replica {} failed: {}", f.ph, f.replica, f.error);
    }
    let runs: Vec<Run> = cells
        .iter()
        .filter_map(|c| c.result.as_ref().ok().map(|t| Run { ph: c.ph, replica: c.replica, trajectory: t }))
        .collect();
    let need = ctx.spec.replicas.min(2);
    let short: Vec<f64> = ctx.spec.ph.iter().copied().filter(|&ph| runs.iter().filter(|r| r.ph == ph).count() < need).collect();

    let dir = ctx.dir("titration")?;
    let mut summary =
        TitrationSummary { header: ctx.header(), ph: ctx.spec.ph.clone(), replicas: ctx.spec.replicas, dbo: ctx.dbo, failed_cells: failed, sites: Vec::new() };
    if !short.is_empty() {
        write_json(&dir.join("summary.json"), &summary)?;
        return Err(CliError::User(format!("fewer than {need} successful replicas at pH {short:?}; see titration/summary.json")));
    }
    let mut any_failed = false;
    for (i, site) in ctx.spec.sites.iter().enumerate() {
        match titrate_site(ctx, i, &runs) {
            Ok(rep) => {
                write_json(&dir.join(format!("{}.json", site.id)), &rep)?;
                write_atomic(&dir.join(format!("{}.csv", site.id)), fractions_csv(&rep).as_bytes())?;
                let pts: Vec<(f64, f64)> = rep.fractions.iter().flat_map(|p| p.replicas.iter().map(move |r| (p.ph, r.fraction))).collect();
                let (pka, n) = (rep.pka, rep.n.filter(|_| rep.fit == FitKind::Hill).unwrap_or(1.0));
                let svg = titration_svg(&format!("{} pKa {:.2}", site.id, pka), &pts, |ph| cph_core::titration::hill_curve(pka, n, ph));
                write_atomic(&dir.join(format!("{}.svg", site.id)), svg.as_bytes())?;
                println!("{}: pKa {:.3} [{}, {}]", site.id, rep.pka, fmt_opt(rep.ci_lo), fmt_opt(rep.ci_hi));
                summary.sites.push(SiteSummary { site: site.id.clone(), pka: Some(rep.pka), ci_lo: rep.ci_lo, ci_hi: rep.ci_hi, error: None });
            }
            Err(e) => {
                eprintln!("{}: {e}", site.id);
                any_failed = true;
                summary.sites.push(SiteSummary { site: site.id.clone(), pka: None, ci_lo: None, ci_hi: None, error: Some(e.to_string()) });
            }
        }
    }
    write_json(&dir.join("summary.json"), &summary)?;
    if any_failed {
        return Err(CliError::User("some sites could not be titrated; see titration/summary.json".into()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

// ------------------------------------------------------------------ analyze

/// Trajectories of every cell, which must already exist.
fn load_cells(ctx: &Context) -> CliResult<Vec<(f64, usize, LambdaTrajectory)>> {
    let dir = ctx.out.join("trajectories");
    let mut out = Vec::new();
    for &ph in &ctx.spec.ph {
        for r in 0..ctx.spec.replicas {
            let path = dir.join(cell_name(ph, r));
            if !path.exists() {
                return Err(CliError::User(format!("{} missing; run `cph titrate` first", path.display())));
            }
            out.push((ph, r, read_trajectory(&path)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPair {
    pub sites: [String; 2],
    pub fit: Option<MacroFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    #[serde(flatten)]
    pub header: Header,
    pub screen: CouplingScreenResult,
    pub flagged: Vec<[String; 2]>,
    pub macroscopic: Vec<MacroPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaBinReport {
    pub bin: usize,
    pub frames: usize,
    #[serde(rename = "pKa")]
    pub pka: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub skipped: Option<String>,
}

impl From<BinTitration> for FmaBinReport {
    fn from(b: BinTitration) -> Self {
        Self { bin: b.bin, frames: b.frames, pka: b.pka, ci_lo: b.ci.map(|c| c.0), ci_hi: b.ci.map(|c| c.1), skipped: b.skipped }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaReport {
    #[serde(flatten)]
    pub header: Header,
    pub site: String,
    pub training_ph: f64,
    pub components: usize,
    pub r2_train: f64,
    pub r2_validation: f64,
    pub validation_replicas: Vec<usize>,
    pub bin_edges: Vec<f64>,
    pub degenerate_bins: bool,
    pub bins: Vec<FmaBinReport>,
    pub low_state_mean: Option<Vec<f64>>,
    pub high_state_mean: Option<Vec<f64>>,
}

fn bound_protons(ph: f64, runs: &[Run], i: usize, j: usize) -> Vec<(f64, f64)> {
    runs.iter()
        .filter(|r| r.ph == ph)
        .filter_map(|r| {
            let t = r.trajectory;
            let fi = cph_core::titration::deprotonation_fraction(&t.lambda_p[i], &t.censored[i]).ok()?;
            let fj = cph_core::titration::deprotonation_fraction(&t.lambda_p[j], &t.censored[j]).ok()?;
            Some((ph, 2.0 - fi - fj))
        })
        .collect()
}

fn analyze_coupling(ctx: &Context, runs: &[Run]) -> CliResult<CouplingReport> {
    let screen = coupling_screen(runs)?;
    let mut flagged = Vec::new();
    let mut macroscopic = Vec::new();
    for p in screen.flagged() {
        let names = [screen.sites[p.i].clone(), screen.sites[p.j].clone()];
        let pts: Vec<(f64, f64)> = screen.ph.iter().flat_map(|&ph| bound_protons(ph, runs, p.i, p.j)).collect();
        let (fit, error) = match fit_macroscopic_two(&pts) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        flagged.push(names.clone());
        macroscopic.push(MacroPair { sites: names, fit, error });
    }
    Ok(CouplingReport { header: ctx.header(), screen, flagged, macroscopic })
}

fn uncensored_frames(t: &LambdaTrajectory, site: usize) -> ReplicaFrames {
    let keep: Vec<usize> = (0..t.n_frames()).filter(|&f| !t.censored[site][f]).collect();
    ReplicaFrames {
        replica: 0,
        features: keep.iter().map(|&f| t.features[f].clone()).collect(),
        y: keep.iter().map(|&f| t.lambda_p[site][f]).collect(),
    }
}

/// FMA for one site: trained at the pH whose mean fraction is closest to
/// one half, then applied to every frame of every run.
fn analyze_fma(ctx: &Context, index: usize, runs: &[Run]) -> CliResult<(FmaReport, String)> {
    let id = &ctx.spec.sites[index].id;
    let ds = TitrationDataset::from_runs(id, runs)?;
    let training_ph = ds
        .pooled_points()
        .into_iter()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|p| p.0)
        .ok_or_else(|| CliError::User("no titration data".into()))?;
    let data: Vec<ReplicaFrames> = runs
        .iter()
        .filter(|r| r.ph == training_ph)
        .map(|r| ReplicaFrames { replica: r.replica, ..uncensored_frames(r.trajectory, index) })
        .collect();
    let fma = fit_fma(&data, ctx.spec.fma_components)?;
    let projections: Vec<Vec<f64>> = runs.iter().map(|r| fma.model.project(&r.trajectory.features)).collect::<Result<_, _>>()?;
    let mut pooled = Vec::new();
    let mut pooled_features = Vec::new();
    for (r, p) in runs.iter().zip(&projections) {
        for f in 0..p.len() {
            if !r.trajectory.censored[index][f] {
                pooled.push(p[f]);
                pooled_features.push(r.trajectory.features[f].clone());
            }
        }
    }
    let binning = percentile_bins(&pooled)?;
    let bins = binned_titration(&binning, id, runs, &projections, ctx.spec.bootstrap, derive_seed(ctx.seed, &[0xF3A, index as u64]))?;
    let means = extreme_state_means(&binning, &pooled, &pooled_features).ok();

    let mut csv = String::from("ph,replica,step,time_ps,fma,censored\n");
    for (r, p) in runs.iter().zip(&projections) {
        let t = r.trajectory;
        for f in 0..p.len() {
            csv.push_str(&format!("{},{},{},{},{},{}\n", r.ph, r.replica, t.steps[f], t.times[f], p[f], u8::from(t.censored[index][f])));
        }
    }
    let report = FmaReport {
        header: ctx.header(),
        site: id.clone(),
        training_ph,
        components: fma.model.n_components,
        r2_train: fma.model.r2_train,
        r2_validation: fma.r2_validation,
        validation_replicas: fma.validation_replicas,
        bin_edges: binning.edges.to_vec(),
        degenerate_bins: binning.degenerate,
        bins: bins.into_iter().map(FmaBinReport::from).collect(),
        low_state_mean: means.as_ref().map(|m| m.0.clone()),
        high_state_mean: means.map(|m| m.1),
    };
    Ok((report, csv))
}

pub fn analyze(ctx: &Context) -> CliResult<()> {
    let cells = load_cells(ctx)?;
    let runs: Vec<Run> = cells.iter().map(|(ph, r, t)| Run { ph: *ph, replica: *r, trajectory: t }).collect();
    let dir = ctx.dir("analysis")?;
    if ctx.spec.sites.len() >= 2 {
        let rep = analyze_coupling(ctx, &runs)?;
        let mut buf = Vec::new();
        rep.screen.write_nmi_csv(&mut buf)?;
        write_atomic(&dir.join("nmi.csv"), &buf)?;
        for pair in &rep.macroscopic {
            match &pair.fit {
                Some(f) => println!("coupled pair {}/{}: macroscopic pKa {:.3}, {:.3}", pair.sites[0], pair.sites[1], f.pka1, f.pka2),
                None => println!("coupled pair {}/{}: macroscopic fit failed", pair.sites[0], pair.sites[1]),
            }
        }
        if rep.flagged.is_empty() {
            println!("no coupled pairs flagged");
        }
        write_json(&dir.join("coupling.json"), &rep)?;
    } else {
        println!("single site: coupling screen skipped");
    }
    if runs.iter().all(|r| r.trajectory.feature_dim() > 0) {
        for (i, s) in ctx.spec.sites.iter().enumerate() {
            match analyze_fma(ctx, i, &runs) {
                Ok((rep, csv)) => {
                    println!("FMA {}: validation R² {:.3}", s.id, rep.r2_validation);
                    write_json(&dir.join(format!("fma_{}.json", s.id)), &rep)?;
                    write_atomic(&dir.join(format!("fma_{}.csv", s.id)), csv.as_bytes())?;
                }
                Err(e) => eprintln!("FMA {} skipped: {e}", s.id),
            }
        }
    } else {
        println!("no feature columns: FMA skipped");
    }
    Ok(())
}

// ------------------------------------------------------------------- report

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    titration: TitrationSummary,
    sites: Vec<TitrationReport>,
    coupling: Option<CouplingReport>,
    fma: Vec<FmaReport>,
}

fn check_hash(ctx: &Context, h: &Header, what: &str) -> CliResult<()> {
    if h.spec_hash != ctx.spec.hash || h.seed != ctx.seed {
        return Err(CliError::User(format!("{what} was produced from a different spec or seed; rerun the pipeline")));
    }
    Ok(())
}

pub fn report(ctx: &Context) -> CliResult<()> {
    let hint = "run `cph titrate` first";
    let titration: TitrationSummary = read_json(&ctx.out.join("titration/summary.json"), hint)?;
    check_hash(ctx, &titration.header, "titration/summary.json")?;
    let mut sites = Vec::new();
    for s in &ctx.spec.sites {
        let path = ctx.out.join("titration").join(format!("{}.json", s.id));
        if path.exists() {
            sites.push(read_json::<TitrationReport>(&path, hint)?);
        }
    }
    let analysis = ctx.out.join("analysis");
    let coupling = if analysis.join("coupling.json").exists() {
        let c: CouplingReport = read_json(&analysis.join("coupling.json"), "")?;
        check_hash(ctx, &c.header, "analysis/coupling.json")?;
        Some(c)
    } else {
        None
    };
    let mut fma = Vec::new();
    for s in &ctx.spec.sites {
        let path = analysis.join(format!("fma_{}.json", s.id));
        if path.exists() {
            let f: FmaReport = read_json(&path, "")?;
            check_hash(ctx, &f.header, "FMA report")?;
            fma.push(f);
        }
    }
    let rep = Report { header: ctx.header(), titration, sites, coupling, fma };
    write_json(&ctx.out.join("report.json"), &rep)?;
    let md = markdown(&rep);
    write_atomic(&ctx.out.join("report.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}

fn markdown(rep: &Report) -> String {
    let mut s = format!("# Titration report\n\n{}  \nspec sha256 `{}`  \nseed {}\n\n", rep.header.tool, rep.header.spec_hash, rep.header.seed);
    s.push_str(&format!(
        "pH grid {:?}, {} replicas per pH, DBO {}\n\n",
        rep.titration.ph,
        rep.titration.replicas,
        if rep.titration.dbo { "on" } else { "off" }
    ));
    s.push_str("| site | pKa | 95% CI | Hill n | micro pKa (δ, ε) |\n|---|---|---|---|---|\n");
    for t in &rep.sites {
        let ci = match (t.ci_lo, t.ci_hi) {
            (Some(a), Some(b)) => format!("{a:.2} to {b:.2}"),
            _ => "-".into(),
        };
        let micro = t.micro.as_ref().map_or_else(|| "-".into(), |m| format!("{:.2}, {:.2}", m.pka_delta, m.pka_eps));
        s.push_str(&format!("| {} | {:.2} | {ci} | {} | {micro} |\n", t.site, t.pka, fmt_opt(t.n)));
    }
    for f in &rep.titration.failed_cells {
        s.push_str(&format!("\nfailed cell: pH {} replica {}: {}\n", f.ph, f.replica, f.error));
    }
    if let Some(c) = &rep.coupling {
        s.push_str("\n## Coupling\n\n");
        if c.macroscopic.is_empty() {
            s.push_str("No pair exceeds the NMI threshold.\n");
        }
        for m in &c.macroscopic {
            match &m.fit {
                Some(f) => s.push_str(&format!("- {} / {}: macroscopic pKa {:.2} and {:.2}\n", m.sites[0], m.sites[1], f.pka1, f.pka2)),
                None => s.push_str(&format!("- {} / {}: flagged, fit failed ({})\n", m.sites[0], m.sites[1], m.error.as_deref().unwrap_or(""))),
            }
        }
    }
    for f in &rep.fma {
        s.push_str(&format!("\n## FMA {}\n\nvalidation R² {:.3} (trained at pH {})\n\n", f.site, f.r2_validation, f.training_ph));
        s.push_str("| bin | frames | pKa | 95% CI |\n|---|---|---|---|\n");
        for b in &f.bins {
            let ci = match (b.ci_lo, b.ci_hi) {
                (Some(a), Some(c)) => format!("{a:.2} to {c:.2}"),
                _ => "-".into(),
            };
            s.push_str(&format!("| {} | {} | {} | {ci} |\n", b.bin, b.frames, b.pka.map_or_else(|| b.skipped.clone().unwrap_or_default(), |p| format!("{p:.2}"))));
        }
    }
    s
}
