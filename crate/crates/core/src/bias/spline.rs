//! Double-well bias along one λ coordinate as a C¹ cubic Hermite spline.
//!
//! Each well is a smoothstep bowl spanning `center ± half_width`, rising to
//! the apex level on both sides; between the inner shoulders the spline is
//! flat at the apex level. Quartic walls confine λ outside `[wall_lo, wall_hi]`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub x: f64,
    pub value: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Well {
    Protonated,
    Deprotonated,
}

pub const APEX: f64 = 0.5;
pub const DEFAULT_BARRIER: f64 = 6.0;
pub const DEFAULT_HALF_WIDTH: f64 = 0.15;
pub const DEFAULT_WALL_STIFFNESS: f64 = 1.0e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleWellSpline {
    pub well0_center: f64,
    pub well1_center: f64,
    pub well0_depth: f64,
    pub well1_depth: f64,
    pub well0_half_width: f64,
    pub well1_half_width: f64,
    pub barrier_height: f64,
    pub wall_stiffness: f64,
    pub wall_lo: f64,
    pub wall_hi: f64,
    pub knots: Vec<Knot>,
}

impl Default for DoubleWellSpline {
    fn default() -> Self {
        Self::symmetric(DEFAULT_BARRIER)
    }
}

impl DoubleWellSpline {
    pub fn symmetric(barrier_height: f64) -> Self {
        Self::with_widths(barrier_height, DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH)
    }

    pub fn with_widths(barrier_height: f64, half_width0: f64, half_width1: f64) -> Self {
        let mut s = Self {
            well0_center: 0.0,
            well1_center: 1.0,
            well0_depth: 0.0,
            well1_depth: 0.0,
            well0_half_width: half_width0,
            well1_half_width: half_width1,
            barrier_height,
            wall_stiffness: DEFAULT_WALL_STIFFNESS,
            wall_lo: -0.1,
            wall_hi: 1.1,
            knots: Vec::new(),
        };
        s.rebuild().expect("default spline parameters are valid");
        s
    }

    pub fn apex_value(&self) -> f64 {
        0.5 * (self.well0_depth + self.well1_depth) + self.barrier_height
    }

    pub fn center(&self, well: Well) -> f64 {
        match well {
            Well::Protonated => self.well0_center,
            Well::Deprotonated => self.well1_center,
        }
    }

    /// Recomputes the knot list from the well and barrier parameters.
    pub fn rebuild(&mut self) -> Result<()> {
        let params = [
            self.well0_center,
            self.well1_center,
            self.well0_depth,
            self.well1_depth,
            self.well0_half_width,
            self.well1_half_width,
            self.barrier_height,
            self.wall_stiffness,
        ];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite spline parameter".into()));
        }
        if self.well0_half_width <= 0.0 || self.well1_half_width <= 0.0 || self.wall_stiffness < 0.0 {
            return Err(Error::InvalidInput("well half widths must be > 0, wall stiffness >= 0".into()));
        }
        let inner0 = self.well0_center + self.well0_half_width;
        let inner1 = self.well1_center - self.well1_half_width;
        if self.well0_center >= APEX || self.well1_center <= APEX || inner0 > APEX + 1e-12 || inner1 < APEX - 1e-12 {
            return Err(Error::InvalidInput(format!(
                "wells overlap the apex: well0 [{}, {inner0}], well1 [{inner1}, {}]",
                self.well0_center, self.well1_center
            )));
        }
        let top = self.apex_value();
        let flat = |x| Knot { x, value: top, slope: 0.0 };
        let mut knots = vec![
            flat(self.well0_center - self.well0_half_width),
            Knot { x: self.well0_center, value: self.well0_depth, slope: 0.0 },
        ];
        if inner0 < APEX - 1e-9 {
            knots.push(flat(inner0));
        }
        knots.push(flat(APEX));
        if inner1 > APEX + 1e-9 {
            knots.push(flat(inner1));
        }
        knots.push(Knot { x: self.well1_center, value: self.well1_depth, slope: 0.0 });
        knots.push(flat(self.well1_center + self.well1_half_width));
        self.knots = knots;
        Ok(())
    }

    pub fn set_barrier_height(&mut self, h: f64) -> Result<()> {
        self.barrier_height = h;
        self.rebuild()
    }

    pub fn set_well1_depth(&mut self, depth: f64) -> Result<()> {
        self.well1_depth = depth;
        self.rebuild()
    }

    pub fn set_center(&mut self, well: Well, center: f64) -> Result<()> {
        match well {
            Well::Protonated => self.well0_center = center,
            Well::Deprotonated => self.well1_center = center,
        }
        self.rebuild()
    }

    pub fn validate_knots(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::InvalidInput("spline needs at least two knots".into()));
        }
        for k in &self.knots {
            if !(k.x.is_finite() && k.value.is_finite() && k.slope.is_finite()) {
                return Err(Error::InvalidInput("non-finite knot".into()));
            }
        }
        if self.knots.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(Error::InvalidInput("knots must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Hermite part only (no walls).
    #[inline]
    pub fn eval_spline(&self, x: f64) -> (f64, f64) {
        let k = &self.knots;
        let first = k[0];
        let last = k[k.len() - 1];
        if x <= first.x {
            return (first.value + first.slope * (x - first.x), first.slope);
        }
        if x >= last.x {
            return (last.value + last.slope * (x - last.x), last.slope);
        }
        let i = k.partition_point(|kn| kn.x <= x) - 1;
        let (a, b) = (k[i], k[i + 1]);
        let h = b.x - a.x;
        let t = (x - a.x) / h;
        if a.slope == 0.0 && b.slope == 0.0 {
            // smoothstep between flat knots
            let d = b.value - a.value;
            return (a.value + d * t * t * (3.0 - 2.0 * t), 6.0 * d * t * (1.0 - t) / h);
        }
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * a.value + h10 * h * a.slope + h01 * b.value + h11 * h * b.slope;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let g = (d00 * a.value + d01 * b.value) / h + d10 * a.slope + d11 * b.slope;
        (v, g)
    }

    #[inline]
    pub fn eval_walls(&self, x: f64) -> (f64, f64) {
        if x < self.wall_lo {
            let d = self.wall_lo - x;
            let d3 = d * d * d;
            (self.wall_stiffness * d3 * d, -4.0 * self.wall_stiffness * d3)
        } else if x > self.wall_hi {
            let d = x - self.wall_hi;
            let d3 = d * d * d;
            (self.wall_stiffness * d3 * d, 4.0 * self.wall_stiffness * d3)
        } else {
            (0.0, 0.0)
        }
    }

    /// Energy (kJ/mol) and dV/dλ including the confining walls.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (v, g) = self.eval_spline(x);
        let (wv, wg) = self.eval_walls(x);
        (v + wv, g + wg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate_knots()?;
        Ok(s)
    }
}
