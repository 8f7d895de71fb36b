//! Run parameters and the flat `key = value` configuration format.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key must be consumed by the reader; leftovers are reported as
//! unknown with the line they came from.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Integration step (ps).
    pub dt: f64,
    /// Target temperature (K).
    pub temperature: f64,
    /// Stochastic rescaling coupling time (ps).
    pub thermostat_tau: f64,
    /// Steps between stored frames.
    pub output_stride: u64,
    pub seed: u64,
    /// Production steps (equilibration comes on top).
    pub n_steps: u64,
    pub ph: f64,
    /// λ equilibration before production (ps).
    pub equilibration_ps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            temperature: 300.0,
            thermostat_tau: 1.0,
            output_stride: 250,
            seed: 0,
            n_steps: 500_000,
            ph: 7.0,
            equilibration_ps: 50.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidInput("temperature must be > 0".into()));
        }
        if !(self.thermostat_tau > 0.0) {
            return Err(Error::InvalidInput("thermostat_tau must be > 0".into()));
        }
        if self.output_stride < 1 {
            return Err(Error::InvalidInput("output_stride must be >= 1".into()));
        }
        if !self.ph.is_finite() || !(self.equilibration_ps >= 0.0) {
            return Err(Error::InvalidInput("pH and equilibration_ps must be finite".into()));
        }
        Ok(())
    }

    pub fn frame_interval_ps(&self) -> f64 {
        self.dt * self.output_stride as f64
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Consumes the RunConfig keys from `kv`, leaving others untouched.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            dt: kv.take_or("dt", d.dt)?,
            temperature: kv.take_or("temperature", d.temperature)?,
            thermostat_tau: kv.take_or("thermostat_tau", d.thermostat_tau)?,
            output_stride: kv.take_or("output_stride", d.output_stride)?,
            seed: kv.take_or("seed", d.seed)?,
            n_steps: kv.take_or("n_steps", d.n_steps)?,
            ph: kv.take_or("ph", d.ph)?,
            equilibration_ps: kv.take_or("equilibration_ps", d.equilibration_ps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "dt = {}\ntemperature = {}\nthermostat_tau = {}\noutput_stride = {}\nseed = {}\nn_steps = {}\nph = {}\nequilibration_ps = {}\n",
            self.dt,
            self.temperature,
            self.thermostat_tau,
            self.output_stride,
            self.seed,
            self.n_steps,
            self.ph,
            self.equilibration_ps
        )
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

/// Parsed `key = value` lines.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config { line, message: format!("expected `key = value`, got `{content}`") });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config { line, message: format!("invalid key `{key}`") });
            }
            if value.is_empty() {
                return Err(Error::Config { line, message: format!("missing value for `{key}`") });
            }
            if let Some(prev) = entries.insert(key.to_string(), Entry { line, value: value.to_string() }) {
                return Err(Error::Config { line, message: format!("duplicate key `{key}` (first on line {})", prev.line) });
            }
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Keys beginning with `prefix`, in sorted order.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Config {
                line: e.line,
                message: format!("cannot parse value `{}` for `{key}`", e.value),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Config { line: 0, message: format!("missing required key `{key}`") })
    }

    /// Comma-separated list value.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::Config { line: e.line, message: format!("cannot parse list `{}` for `{key}`", e.value) }),
        }
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    /// Errors on the first (by line) key that nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(Error::Config { line: e.line, message: format!("unknown key `{k}`") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.dt, 0.002);
        assert_eq!(c.output_stride, 250);
        assert!((c.frame_interval_ps() - 0.5).abs() < 1e-12);
        assert_eq!(c.thermostat_tau, 1.0);
    }

    #[test]
    fn parses_all_fields_and_comments() {
        let text = "# run\n dt = 0.001\ntemperature=310 # K\nthermostat_tau = 0.5\noutput_stride = 100\nseed = 42\nn_steps = 1000\nph = 4.5\nequilibration_ps = 0\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.dt, 0.001);
        assert_eq!(c.temperature, 310.0);
        assert_eq!(c.seed, 42);
        assert_eq!(c.ph, 4.5);
        assert_eq!(RunConfig::parse(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse("dt = 0.002\nbogus = 1\n").unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(RunConfig::parse("dt 0.002"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\n\ndt = abc"), Err(Error::Config { line: 3, .. })));
        assert!(matches!(RunConfig::parse("dt = 1\ndt = 2"), Err(Error::Config { line: 2, .. })));
        assert!(RunConfig::parse("dt = -1").is_err());
        assert!(RunConfig::parse("output_stride = 0").is_err());
    }
}
