use crate::error::{Error, Result};
use crate::units::classify;
use std::io::{Read, Write};

/// Frames of one replica, stored per site.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LambdaTrajectory {
    pub site_ids: Vec<String>,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    /// Indexed [site][frame].
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_t: Vec<Vec<f64>>,
    pub censored: Vec<Vec<bool>>,
    /// Indexed [frame][feature]; empty when no latent chain emits features.
    pub features: Vec<Vec<f64>>,
}

impl LambdaTrajectory {
    pub fn new(site_ids: Vec<String>) -> Self {
        let n = site_ids.len();
        Self {
            site_ids,
            lambda_p: vec![Vec::new(); n],
            lambda_t: vec![Vec::new(); n],
            censored: vec![Vec::new(); n],
            ..Default::default()
        }
    }

    pub fn n_frames(&self) -> usize {
        self.times.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.site_ids.iter().position(|s| s == id)
    }

    /// Deprotonation bits of uncensored frames.
    pub fn protonation_bits(&self, site: usize) -> Vec<bool> {
        self.lambda_p[site]
            .iter()
            .zip(&self.censored[site])
            .filter(|(_, &c)| !c)
            .map(|(&l, _)| classify(l).is_deprotonated())
            .collect()
    }

    /// Frames where none of the listed sites is censored.
    pub fn jointly_uncensored(&self, sites: &[usize]) -> Vec<usize> {
        (0..self.n_frames()).filter(|&f| sites.iter().all(|&s| !self.censored[s][f])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        if self.steps.len() != n {
            return Err(Error::InvalidInput("step and time columns differ in length".into()));
        }
        for s in 0..self.n_sites() {
            if self.lambda_p[s].len() != n || self.lambda_t[s].len() != n || self.censored[s].len() != n {
                return Err(Error::InvalidInput(format!("site {} has a ragged column", self.site_ids[s])));
            }
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("frame times must be strictly increasing".into()));
        }
        if !self.features.is_empty() && (self.features.len() != n || self.features.iter().any(|f| f.len() != self.feature_dim())) {
            return Err(Error::InvalidInput("feature rows are ragged".into()));
        }
        Ok(())
    }

    /// CSV with header `step,time_ps,site,lambda_p,lambda_t,censored[,f1..fd]`,
    /// one row per (frame, site).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.feature_dim();
        let mut header: Vec<String> =
            ["step", "time_ps", "site", "lambda_p", "lambda_t", "censored"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=d).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(6 + d);
        for f in 0..self.n_frames() {
            for s in 0..self.n_sites() {
                row.clear();
                row.push(self.steps[f].to_string());
                row.push(self.times[f].to_string());
                row.push(self.site_ids[s].clone());
                row.push(self.lambda_p[s][f].to_string());
                row.push(self.lambda_t[s][f].to_string());
                row.push(u8::from(self.censored[s][f]).to_string());
                if d > 0 {
                    row.extend(self.features[f].iter().map(f64::to_string));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let expected = ["step", "time_ps", "site", "lambda_p", "lambda_t", "censored"];
        if header.len() < 6 || header.iter().take(6).ne(expected.iter().copied()) {
            return Err(Error::InvalidInput(format!(
                "unexpected trajectory header: {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let d = header.len() - 6;
        let mut traj = LambdaTrajectory::default();
        let mut site_pos = 0usize;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |what: &str| Error::InvalidInput(format!("trajectory line {line}: bad {what}"));
            let step: u64 = rec[0].parse().map_err(|_| bad("step"))?;
            let time: f64 = rec[1].parse().map_err(|_| bad("time_ps"))?;
            let site = &rec[2];
            let lp: f64 = rec[3].parse().map_err(|_| bad("lambda_p"))?;
            let lt: f64 = rec[4].parse().map_err(|_| bad("lambda_t"))?;
            let censored = match &rec[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("censored flag")),
            };
            let new_frame = traj.steps.last() != Some(&step);
            if new_frame {
                if traj.steps.len() > 1 && site_pos != traj.site_ids.len() {
                    return Err(bad("frame (missing site rows before it)"));
                }
                traj.steps.push(step);
                traj.times.push(time);
                if d > 0 {
                    let feats: std::result::Result<Vec<f64>, _> = (6..6 + d).map(|k| rec[k].parse::<f64>()).collect();
                    traj.features.push(feats.map_err(|_| bad("feature"))?);
                }
                site_pos = 0;
            }
            if traj.steps.len() == 1 {
                if traj.site_ids.iter().any(|s| s == site) {
                    return Err(bad("site (duplicate in frame)"));
                }
                traj.site_ids.push(site.to_string());
                traj.lambda_p.push(Vec::new());
                traj.lambda_t.push(Vec::new());
                traj.censored.push(Vec::new());
            } else if traj.site_ids.get(site_pos).map(String::as_str) != Some(site) {
                return Err(bad("site order"));
            }
            traj.lambda_p[site_pos].push(lp);
            traj.lambda_t[site_pos].push(lt);
            traj.censored[site_pos].push(censored);
            site_pos += 1;
        }
        traj.validate()?;
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(features: bool) -> LambdaTrajectory {
        let mut t = LambdaTrajectory::new(vec!["asp".into(), "his".into()]);
        for f in 0..5u64 {
            t.steps.push((f + 1) * 250);
            t.times.push((f + 1) as f64 * 0.5);
            for s in 0..2 {
                t.lambda_p[s].push(0.1 * f as f64 + s as f64 * 0.333_333_333_333_333_3);
                t.lambda_t[s].push(-0.05 * s as f64);
                t.censored[s].push(f == 2 && s == 1);
            }
            if features {
                t.features.push(vec![f as f64 / 3.0, -1e-17]);
            }
        }
        t
    }

    #[test]
    fn csv_round_trip_is_exact() {
        for feats in [false, true] {
            let t = sample(feats);
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            let back = LambdaTrajectory::read_csv(buf.as_slice()).unwrap();
            assert_eq!(back, t);
            let mut again = Vec::new();
            back.write_csv(&mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        sample(true).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,time_ps,site,lambda_p,lambda_t,censored,f1,f2\n"));
    }

    #[test]
    fn rejects_missing_site_row() {
        let text = "step,time_ps,site,lambda_p,lambda_t,censored\n1,0.5,a,0,0,0\n1,0.5,b,0,0,0\n2,1,a,0,0,0\n3,1.5,a,0,0,0\n";
        let err = LambdaTrajectory::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn protonation_bits_skip_censored() {
        let t = sample(false);
        assert_eq!(t.protonation_bits(1), vec![false, false, true, true]);
    }
}
