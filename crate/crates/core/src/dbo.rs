//! Dynamic barrier and well optimization: block-wise feedback on the
//! double-well bias of each site.

use crate::bias::Well;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellSettings {
    pub block_ps: f64,
    pub residency: f64,
    pub low_cut: f64,
    pub high_cut: f64,
    pub tolerance: f64,
    pub gain: f64,
    pub cap: f64,
}

impl Default for WellSettings {
    fn default() -> Self {
        Self { block_ps: 40.0, residency: 0.70, low_cut: 0.2, high_cut: 0.8, tolerance: 0.03, gain: 0.5, cap: 0.08 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSettings {
    pub block_ps: f64,
    pub band: (f64, f64),
    pub target: f64,
    pub tolerance: f64,
    pub increment: f64,
    pub min: f64,
    pub max: f64,
    pub initial: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            block_ps: 1000.0,
            band: (0.2, 0.8),
            target: 0.25,
            tolerance: 0.05,
            increment: 1.0,
            min: 1.0,
            max: 20.0,
            initial: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DboSettings {
    pub well: WellSettings,
    pub barrier: BarrierSettings,
    pub censor_ps: f64,
    /// λt barriers are only adjusted when the block holds at least this
    /// many frames in the matching protonation state.
    pub min_state_frames: usize,
}

impl Default for DboSettings {
    fn default() -> Self {
        Self { well: WellSettings::default(), barrier: BarrierSettings::default(), censor_ps: 10.0, min_state_frames: 100 }
    }
}

/// Per-block accumulators for the well controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WellBlockStats {
    pub frames: usize,
    pub n_low: usize,
    pub sum_low: f64,
    pub n_high: usize,
    pub sum_high: f64,
}

impl WellBlockStats {
    pub fn record(&mut self, lambda: f64, settings: &WellSettings) {
        self.frames += 1;
        if lambda < settings.low_cut {
            self.n_low += 1;
            self.sum_low += lambda;
        } else if lambda > settings.high_cut {
            self.n_high += 1;
            self.sum_high += lambda;
        }
    }
}

/// Well shift for a finished block: moves the dominant well by
/// gain·(ideal − mean λ), keeping the cumulative shift within the cap.
/// `cumulative` is indexed by well (0, 1).
pub fn well_block_decide(settings: &WellSettings, stats: &WellBlockStats, cumulative: [f64; 2]) -> Option<(Well, f64)> {
    if stats.frames == 0 {
        return None;
    }
    let candidates = [(Well::Protonated, 0.0, stats.n_low, stats.sum_low), (Well::Deprotonated, 1.0, stats.n_high, stats.sum_high)];
    for (k, (well, ideal, n, sum)) in candidates.into_iter().enumerate() {
        if n == 0 || (n as f64 / stats.frames as f64) <= settings.residency {
            continue;
        }
        let mean = sum / n as f64;
        if (mean - ideal).abs() <= settings.tolerance {
            return None;
        }
        let wanted = cumulative[k] + settings.gain * (ideal - mean);
        let clamped = wanted.clamp(-settings.cap, settings.cap);
        let shift = clamped - cumulative[k];
        return (shift != 0.0).then_some((well, shift));
    }
    None
}

/// New barrier height after a block with the given in-transition fraction.
pub fn barrier_block_decide(settings: &BarrierSettings, height: f64, fraction: f64) -> f64 {
    let next = if fraction < settings.target - settings.tolerance {
        height - settings.increment
    } else if fraction > settings.target + settings.tolerance {
        height + settings.increment
    } else {
        height
    };
    next.clamp(settings.min, settings.max)
}

/// Well controller for one λp coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct WellAdjustState {
    pub settings: WellSettings,
    pub cumulative: [f64; 2],
    pub stats: WellBlockStats,
}

impl WellAdjustState {
    pub fn new(settings: WellSettings) -> Self {
        Self { settings, cumulative: [0.0; 2], stats: WellBlockStats::default() }
    }

    pub fn record(&mut self, lambda: f64) {
        self.stats.record(lambda, &self.settings);
    }

    /// Closes the block; returns the shift to apply, if any.
    pub fn close_block(&mut self) -> Option<(Well, f64)> {
        let decision = well_block_decide(&self.settings, &self.stats, self.cumulative);
        if let Some((well, shift)) = decision {
            self.cumulative[well_index(well)] += shift;
        }
        self.stats = WellBlockStats::default();
        decision
    }
}

fn well_index(w: Well) -> usize {
    match w {
        Well::Protonated => 0,
        Well::Deprotonated => 1,
    }
}

/// Barrier controller for one coordinate (or one protonation state of λt).
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierAdjustState {
    pub settings: BarrierSettings,
    pub height: f64,
    pub frames: usize,
    pub in_transition: usize,
}

impl BarrierAdjustState {
    pub fn new(settings: BarrierSettings, height: f64) -> Self {
        Self { settings, height: height.clamp(settings.min, settings.max), frames: 0, in_transition: 0 }
    }

    pub fn record(&mut self, lambda: f64) {
        self.frames += 1;
        if lambda > self.settings.band.0 && lambda < self.settings.band.1 {
            self.in_transition += 1;
        }
    }

    /// Closes the block and returns (fraction, old height, new height);
    /// None when fewer than `min_frames` frames were recorded.
    pub fn close_block(&mut self, min_frames: usize) -> Option<(f64, f64, f64)> {
        let result = (self.frames >= min_frames.max(1)).then(|| {
            let fraction = self.in_transition as f64 / self.frames as f64;
            let old = self.height;
            self.height = barrier_block_decide(&self.settings, old, fraction);
            (fraction, old, self.height)
        });
        self.frames = 0;
        self.in_transition = 0;
        result
    }
}

/// Flags frames whose time lies in [t, t + window).
pub fn censor_window(times: &[f64], flags: &mut [bool], adjustment_time: f64, window: f64) {
    // small slack so frames exactly on the boundaries are not lost to rounding
    let eps = 1e-9 * window.max(1.0);
    for (t, f) in times.iter().zip(flags.iter_mut()) {
        if *t >= adjustment_time - eps && *t < adjustment_time + window - eps {
            *f = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjustKind {
    Well,
    Barrier,
}

impl fmt::Display for AdjustKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjustKind::Well => "well",
            AdjustKind::Barrier => "barrier",
        })
    }
}

/// One controller action. For λt barriers the site label carries a
/// `/t:protonated` or `/t:deprotonated` suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DboEvent {
    pub time_ps: f64,
    pub site: String,
    pub kind: AdjustKind,
    pub old: f64,
    pub new: f64,
}

pub fn write_event_log<W: Write>(events: &[DboEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_ps", "site", "kind", "old", "new"])?;
    for e in events {
        w.write_record([e.time_ps.to_string(), e.site.clone(), e.kind.to_string(), e.old.to_string(), e.new.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_event_log<R: Read>(input: R) -> Result<Vec<DboEvent>> {
    let mut r = csv::Reader::from_reader(input);
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidInput(format!("event log line {}: bad {what}", i + 2));
        if rec.len() != 5 {
            return Err(bad("field count"));
        }
        let kind = match &rec[2] {
            "well" => AdjustKind::Well,
            "barrier" => AdjustKind::Barrier,
            _ => return Err(bad("kind")),
        };
        events.push(DboEvent {
            time_ps: rec[0].parse().map_err(|_| bad("time_ps"))?,
            site: rec[1].to_string(),
            kind,
            old: rec[3].parse().map_err(|_| bad("old"))?,
            new: rec[4].parse().map_err(|_| bad("new"))?,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_low(frames: usize, n: usize, mean: f64) -> WellBlockStats {
        WellBlockStats { frames, n_low: n, sum_low: mean * n as f64, ..Default::default() }
    }

    #[test]
    fn well_shift_toward_ideal() {
        let s = WellSettings::default();
        let (w, d) = well_block_decide(&s, &stats_low(100, 80, 0.05), [0.0; 2]).unwrap();
        assert_eq!(w, Well::Protonated);
        assert!((d + 0.025).abs() < 1e-12);
    }

    #[test]
    fn low_residency_no_shift() {
        assert_eq!(well_block_decide(&WellSettings::default(), &stats_low(100, 60, 0.1), [0.0; 2]), None);
    }

    #[test]
    fn within_tolerance_no_shift() {
        assert_eq!(well_block_decide(&WellSettings::default(), &stats_low(100, 90, 0.02), [0.0; 2]), None);
    }

    #[test]
    fn high_well_shift() {
        let stats = WellBlockStats { frames: 10, n_high: 9, sum_high: 9.0 * 0.9, ..Default::default() };
        let (w, d) = well_block_decide(&WellSettings::default(), &stats, [0.0; 2]).unwrap();
        assert_eq!(w, Well::Deprotonated);
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn cumulative_cap() {
        let s = WellSettings::default();
        let (_, d) = well_block_decide(&s, &stats_low(100, 90, 0.15), [-0.07, 0.0]).unwrap();
        assert!((d + 0.01).abs() < 1e-12);
        assert_eq!(well_block_decide(&s, &stats_low(100, 90, 0.15), [-0.08, 0.0]), None);
    }

    #[test]
    fn barrier_examples() {
        let s = BarrierSettings::default();
        assert_eq!(barrier_block_decide(&s, 6.0, 0.10), 5.0);
        assert_eq!(barrier_block_decide(&s, 6.0, 0.27), 6.0);
        assert_eq!(barrier_block_decide(&s, 1.0, 0.05), 1.0);
        assert_eq!(barrier_block_decide(&s, 20.0, 0.9), 20.0);
        assert_eq!(barrier_block_decide(&s, 6.0, 0.31), 7.0);
    }

    #[test]
    fn censor_twenty_frames() {
        let times: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.5).collect();
        let mut flags = vec![false; times.len()];
        censor_window(&times, &mut flags, 100.0, 10.0);
        assert_eq!(flags.iter().filter(|&&f| f).count(), 20);
        let mut none = vec![false; times.len()];
        censor_window(&times, &mut none, 1e9, 10.0);
        assert!(none.iter().all(|&f| !f));
    }

    #[test]
    fn overlapping_windows_merge() {
        let times: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.5).collect();
        let mut flags = vec![false; times.len()];
        censor_window(&times, &mut flags, 100.0, 10.0);
        censor_window(&times, &mut flags, 105.0, 10.0);
        assert_eq!(flags.iter().filter(|&&f| f).count(), 30);
    }

    #[test]
    fn event_log_round_trip() {
        let ev = vec![
            DboEvent { time_ps: 1000.0, site: "asp".into(), kind: AdjustKind::Barrier, old: 6.0, new: 5.0 },
            DboEvent { time_ps: 40.0, site: "his/t:protonated".into(), kind: AdjustKind::Well, old: 0.0, new: -0.0125 },
        ];
        let mut buf = Vec::new();
        write_event_log(&ev, &mut buf).unwrap();
        assert!(buf.starts_with(b"time_ps,site,kind,old,new\n"));
        assert_eq!(read_event_log(buf.as_slice()).unwrap(), ev);
    }

    proptest! {
        #[test]
        fn controllers_stay_in_bounds(fractions in proptest::collection::vec(0.0f64..1.0, 1..200),
                                      means in proptest::collection::vec(-0.1f64..0.2, 1..200)) {
            let s = BarrierSettings::default();
            let mut b = BarrierAdjustState::new(s, s.initial);
            for f in fractions {
                let n = 100;
                let k = (f * n as f64) as usize;
                for i in 0..n { b.record(if i < k { 0.5 } else { 0.0 }); }
                let (_, old, new) = b.close_block(1).unwrap();
                prop_assert!(new >= 1.0 && new <= 20.0);
                prop_assert!((new - old).abs() == 0.0 || (new - old).abs() == 1.0);
            }
            let mut w = WellAdjustState::new(WellSettings::default());
            for m in means {
                for _ in 0..100 { w.record(m); }
                w.close_block();
                prop_assert!(w.cumulative[0].abs() <= 0.08 + 1e-15 && w.cumulative[1].abs() <= 0.08 + 1e-15);
            }
        }
    }
}
