//! Functional mode analysis: PLS regression of λp on feature vectors,
//! projection onto the regression direction and FMA-binned titration.

use crate::error::{Error, Result};
use crate::titration::{bootstrap_pooled_ci, fit_hh, FitKind, Run, TitrationCell, TitrationDataset};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DEFAULT_COMPONENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub n_components: usize,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    pub weights: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub y_loadings: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub r2_train: f64,
    /// Range of the training predictions, mapped onto [0, 1] by `project`.
    pub scale: (f64, f64),
}

pub fn r_squared(y: &[f64], yhat: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("feature rows must be non-empty and equally long".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// PLS1 by NIPALS deflation. Stops early once the remaining features
/// carry no covariance with y (numerical rank reached).
pub fn pls_fit(x: &[Vec<f64>], y: &[f64], n_components: usize) -> Result<PlsModel> {
    let mut xm = to_matrix(x)?;
    if y.len() != xm.nrows() {
        return Err(Error::InvalidInput(format!("{} targets for {} frames", y.len(), xm.nrows())));
    }
    if n_components == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    let (n, p) = xm.shape();
    let x_mean: Vec<f64> = (0..p).map(|j| xm.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    for j in 0..p {
        xm.column_mut(j).add_scalar_mut(-x_mean[j]);
    }
    let mut yv = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let y_ss = yv.norm_squared();
    if !(y_ss > 1e-300) {
        return Err(Error::DegenerateTarget("target has zero variance".into()));
    }
    let x_scale = xm.norm();
    let (mut ws, mut ps, mut qs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_components.min(p) {
        let w = xm.transpose() * &yv;
        let wn = w.norm();
        if wn <= 1e-12 * x_scale * y_ss.sqrt() {
            break;
        }
        let w = w / wn;
        let t = &xm * &w;
        let tt = t.norm_squared();
        if tt <= 1e-24 * x_scale * x_scale {
            break;
        }
        let pl = xm.transpose() * &t / tt;
        let q = yv.dot(&t) / tt;
        xm -= &t * pl.transpose();
        yv -= &t * q;
        ws.push(w);
        ps.push(pl);
        qs.push(q);
    }
    let a = ws.len();
    if a == 0 {
        return Err(Error::DegenerateTarget("features carry no covariance with the target".into()));
    }
    let w = DMatrix::from_columns(&ws);
    let pm = DMatrix::from_columns(&ps);
    let ptw = pm.transpose() * &w;
    let inv = ptw.try_inverse().ok_or_else(|| Error::SingularFit("PᵀW not invertible".into()))?;
    let beta = &w * inv * DVector::from_vec(qs.clone());
    let mut model = PlsModel {
        n_components: a,
        x_mean,
        y_mean,
        weights: ws.iter().map(|v| v.as_slice().to_vec()).collect(),
        loadings: ps.iter().map(|v| v.as_slice().to_vec()).collect(),
        y_loadings: qs,
        coefficients: beta.as_slice().to_vec(),
        r2_train: 0.0,
        scale: (0.0, 1.0),
    };
    let pred: Vec<f64> = x.iter().map(|r| model.predict(r)).collect();
    model.r2_train = r_squared(y, &pred);
    let lo = pred.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    model.scale = (lo, hi);
    Ok(model)
}

impl PlsModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.y_mean + row.iter().zip(&self.x_mean).zip(&self.coefficients).map(|((x, m), b)| (x - m) * b).sum::<f64>()
    }

    /// FMA trajectory: predictions rescaled so the training range maps to [0, 1].
    pub fn project(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let p = self.x_mean.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::InvalidInput(format!("frame has {} features, model expects {p}", r.len())));
        }
        let (lo, hi) = self.scale;
        let span = hi - lo;
        Ok(rows.iter().map(|r| if span > 0.0 { (self.predict(r) - lo) / span } else { 0.0 }).collect())
    }
}

/// Replica-level holdout: every fifth replica (in sorted id order) is
/// used for validation, so 20% with five or more replicas.
pub fn validation_split(replicas: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids = replicas.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (k, id) in ids.iter().enumerate() {
        if k % 5 == 4 || (ids.len() < 5 && ids.len() >= 2 && k == ids.len() - 1) {
            valid.push(*id);
        } else {
            train.push(*id);
        }
    }
    (train, valid)
}

/// Frames of one replica: features and λp.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaFrames {
    pub replica: usize,
    pub features: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaFit {
    pub model: PlsModel,
    pub r2_validation: f64,
    pub train_replicas: Vec<usize>,
    pub validation_replicas: Vec<usize>,
}

pub fn fit_fma(data: &[ReplicaFrames], n_components: usize) -> Result<FmaFit> {
    let ids: Vec<usize> = data.iter().map(|d| d.replica).collect();
    let (train, valid) = validation_split(&ids);
    if valid.is_empty() {
        return Err(Error::InsufficientData("need at least two replicas for a validation split".into()));
    }
    let gather = |set: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for d in data.iter().filter(|d| set.contains(&d.replica)) {
            x.extend(d.features.iter().cloned());
            y.extend(&d.y);
        }
        (x, y)
    };
    let (xt, yt) = gather(&train);
    let (xv, yv) = gather(&valid);
    let model = pls_fit(&xt, &yt, n_components)?;
    let pred: Vec<f64> = xv.iter().map(|r| model.predict(r)).collect();
    Ok(FmaFit { r2_validation: r_squared(&yv, &pred), model, train_replicas: train, validation_replicas: valid })
}

pub const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];
pub const N_BINS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmaBinning {
    pub edges: [f64; 5],
    /// All edges coincide; every value lands in the first bin.
    pub degenerate: bool,
}

/// Nearest-rank percentile of sorted data (p in percent).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn percentile_bins(values: &[f64]) -> Result<FmaBinning> {
    if values.len() < 100 {
        return Err(Error::InsufficientData(format!("{} values, need at least 100", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite FMA value".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let edges = PERCENTILES.map(|p| nearest_rank(&s, p));
    Ok(FmaBinning { degenerate: edges[0] == edges[4], edges })
}

impl FmaBinning {
    /// Bin 0 holds values ≤ the 5th percentile, bin 5 those above the 95th.
    pub fn assign(&self, v: f64) -> usize {
        self.edges.iter().position(|&e| v <= e).unwrap_or(N_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTitration {
    pub bin: usize,
    pub frames: usize,
    pub pka: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Why the bin has no pKa.
    pub skipped: Option<String>,
}

pub const MIN_BIN_FRAMES: usize = 100;

/// Titration within each FMA bin. `projections[k]` is the FMA trajectory
/// of `runs[k]`. Bins with fewer than 100 uncensored frames at any pH are
/// skipped; the CI comes from a pooled replica bootstrap.
pub fn binned_titration(
    binning: &FmaBinning,
    site: &str,
    runs: &[Run],
    projections: &[Vec<f64>],
    bootstrap: usize,
    seed: u64,
) -> Result<Vec<BinTitration>> {
    if runs.len() != projections.len() {
        return Err(Error::InvalidInput("one FMA trajectory per run required".into()));
    }
    let mut datasets: Vec<TitrationDataset> = (0..N_BINS).map(|b| TitrationDataset::new(format!("{site}:bin{b}"))).collect();
    let mut ph_list: Vec<f64> = Vec::new();
    for (run, proj) in runs.iter().zip(projections) {
        let t = run.trajectory;
        let s = t.site_index(site).ok_or_else(|| Error::InvalidInput(format!("site {site} missing from trajectory")))?;
        if proj.len() != t.n_frames() {
            return Err(Error::InvalidInput("FMA trajectory is not frame-aligned".into()));
        }
        if !ph_list.contains(&run.ph) {
            ph_list.push(run.ph);
        }
        let mut counts = [(0usize, 0usize); N_BINS];
        for f in 0..t.n_frames() {
            if t.censored[s][f] {
                continue;
            }
            let c = &mut counts[binning.assign(proj[f])];
            c.0 += 1;
            c.1 += usize::from(crate::units::classify(t.lambda_p[s][f]).is_deprotonated());
        }
        for (b, &(n, d)) in counts.iter().enumerate() {
            if n > 0 {
                datasets[b].push(run.ph, TitrationCell { replica: run.replica, n, n_deprot: d, n_censored: 0 })?;
            }
        }
    }
    let mut out = Vec::with_capacity(N_BINS);
    for (b, ds) in datasets.iter().enumerate() {
        let frames: usize = ds.cells.iter().flatten().map(|c| c.n).sum();
        let sparse = ph_list.iter().find(|&&ph| {
            ds.ph.iter().position(|&p| p == ph).map_or(0, |k| ds.cells[k].iter().map(|c| c.n).sum::<usize>()) < MIN_BIN_FRAMES
        });
        if let Some(ph) = sparse {
            out.push(BinTitration { bin: b, frames, pka: None, ci: None, skipped: Some(format!("fewer than {MIN_BIN_FRAMES} frames at pH {ph}")) });
            continue;
        }
        let fit = match fit_hh(&ds.pooled_points()) {
            Ok(f) => f,
            Err(e) => {
                out.push(BinTitration { bin: b, frames, pka: None, ci: None, skipped: Some(e.to_string()) });
                continue;
            }
        };
        let ci = if bootstrap > 0 {
            bootstrap_pooled_ci(ds, FitKind::HendersonHasselbalch, bootstrap, seed).ok().map(|r| (r.pka_lo, r.pka_hi))
        } else {
            None
        };
        out.push(BinTitration { bin: b, frames, pka: Some(fit.pka), ci, skipped: None });
    }
    Ok(out)
}

/// Mean feature vectors of the lowest (≤ 5th percentile) and highest
/// (> 95th percentile) bins.
pub fn extreme_state_means(binning: &FmaBinning, values: &[f64], features: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != features.len() {
        return Err(Error::InvalidInput("values and features differ in length".into()));
    }
    let d = features.first().map_or(0, Vec::len);
    let mut sums = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (&v, f) in values.iter().zip(features) {
        let k = match binning.assign(v) {
            0 => 0,
            b if b == N_BINS - 1 => 1,
            _ => continue,
        };
        counts[k] += 1;
        for (s, x) in sums[k].iter_mut().zip(f) {
            *s += x;
        }
    }
    if counts.contains(&0) {
        return Err(Error::EmptyData("an extreme FMA bin is empty".into()));
    }
    let [lo, hi] = sums;
    Ok((lo.iter().map(|s| s / counts[0] as f64).collect(), hi.iter().map(|s| s / counts[1] as f64).collect()))
}
