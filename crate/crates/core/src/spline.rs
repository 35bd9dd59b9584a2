//! Piecewise-cubic curves: evaluation, differentiation and the JSON / CSV
//! artifact formats.
//!
//! Coefficients are stored in local coordinates `s = t - breakpoint[k]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::CubicSegment;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve {
    breakpoints: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct SegmentDoc {
    c0: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplineDoc {
    breakpoints: Vec<f64>,
    segments: Vec<SegmentDoc>,
}

/// Derivative order for [`SplineCurve::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Order {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Order::Value),
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::Shape(format!("derivative order {v} not in 0..=2"))),
        }
    }
}

impl SplineCurve {
    pub fn new(breakpoints: Vec<f64>, coeffs: Vec<[f64; 4]>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::MalformedSpline("no segments".into()));
        }
        if breakpoints.len() != coeffs.len() + 1 {
            return Err(Error::MalformedSpline(format!(
                "{} breakpoints for {} segments",
                breakpoints.len(),
                coeffs.len()
            )));
        }
        if breakpoints
            .iter()
            .chain(coeffs.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::MalformedSpline("non-finite number".into()));
        }
        if let Some(i) = breakpoints.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::MalformedSpline(format!(
                "breakpoints not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self {
            breakpoints,
            coeffs,
        })
    }

    /// Joins contiguous segments; each must start where the previous ended.
    pub fn from_segments(segments: &[CubicSegment]) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::MalformedSpline("no segments".into()))?;
        let mut breakpoints = vec![first.t_start];
        let mut coeffs = Vec::with_capacity(segments.len());
        for seg in segments {
            let last = *breakpoints.last().unwrap();
            if (seg.t_start - last).abs() > 1e-12 * (1.0 + last.abs()) {
                return Err(Error::MalformedSpline(format!(
                    "gap between {last} and {}",
                    seg.t_start
                )));
            }
            breakpoints.push(seg.t_end);
            coeffs.push([seg.c0, seg.c1, seg.c2, seg.c3]);
        }
        Self::new(breakpoints, coeffs)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    pub fn n_segments(&self) -> usize {
        self.coeffs.len()
    }

    pub fn segment(&self, k: usize) -> CubicSegment {
        let [c0, c1, c2, c3] = self.coeffs[k];
        CubicSegment {
            t_start: self.breakpoints[k],
            t_end: self.breakpoints[k + 1],
            c0,
            c1,
            c2,
            c3,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = CubicSegment> + '_ {
        (0..self.n_segments()).map(|k| self.segment(k))
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Index of the segment containing `t`; breakpoints belong to the segment
    /// on their right, except the final one.
    fn locate(&self, t: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        k.saturating_sub(1).min(self.n_segments() - 1)
    }

    /// Evaluates the curve or a derivative. Outside the domain this errors
    /// unless `clamp` is set, in which case the curve is extended by its
    /// endpoint values (derivatives there are zero).
    pub fn eval(&self, t: f64, order: Order, clamp: bool) -> Result<f64> {
        let (a, b) = self.domain();
        if !(a..=b).contains(&t) {
            if !clamp {
                return Err(Error::OutOfDomain {
                    t,
                    start: a,
                    end: b,
                });
            }
            return Ok(match order {
                Order::Value => self.value(if t < a { a } else { b }),
                _ => 0.0,
            });
        }
        let seg = self.segment(self.locate(t));
        Ok(match order {
            Order::Value => seg.value(t),
            Order::First => seg.derivative(t),
            Order::Second => seg.second_derivative(t),
        })
    }

    /// Value at a point inside the domain; clamps silently.
    pub fn value(&self, t: f64) -> f64 {
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        self.segment(self.locate(t)).value(t)
    }

    pub fn derivative_at(&self, t: f64) -> f64 {
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        self.segment(self.locate(t)).derivative(t)
    }

    pub fn second_derivative_at(&self, t: f64) -> f64 {
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        self.segment(self.locate(t)).second_derivative(t)
    }

    /// Exact derivative curve (quadratic pieces with `c3 = 0`).
    pub fn derivative(&self) -> SplineCurve {
        SplineCurve {
            breakpoints: self.breakpoints.clone(),
            coeffs: self
                .coeffs
                .iter()
                .map(|c| [c[1], 2.0 * c[2], 3.0 * c[3], 0.0])
                .collect(),
        }
    }

    /// Exact integral over the whole domain.
    pub fn integral(&self) -> f64 {
        self.segments()
            .map(|s| {
                let h = s.t_end - s.t_start;
                h * (s.c0 + h * (s.c1 / 2.0 + h * (s.c2 / 3.0 + h * s.c3 / 4.0)))
            })
            .sum()
    }

    /// Largest value and first-derivative jumps across internal breakpoints.
    pub fn continuity_defect(&self) -> (f64, f64) {
        let mut dv: f64 = 0.0;
        let mut dd: f64 = 0.0;
        for k in 1..self.n_segments() {
            let left = self.segment(k - 1);
            let right = self.segment(k);
            let t = self.breakpoints[k];
            dv = dv.max((left.value(t) - right.value(t)).abs());
            dd = dd.max((left.derivative(t) - right.derivative(t)).abs());
        }
        (dv, dd)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SplineDoc {
            breakpoints: self.breakpoints.clone(),
            segments: self
                .coeffs
                .iter()
                .map(|c| SegmentDoc {
                    c0: c[0],
                    c1: c[1],
                    c2: c[2],
                    c3: c[3],
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SplineDoc =
            serde_json::from_str(text).map_err(|e| Error::MalformedSpline(e.to_string()))?;
        Self::new(
            doc.breakpoints,
            doc.segments
                .iter()
                .map(|s| [s.c0, s.c1, s.c2, s.c3])
                .collect(),
        )
    }

    /// Uniform samples `t,x,dx,ddx` over the domain (`n >= 2` points).
    pub fn write_samples<W: Write>(&self, out: W, n: usize) -> Result<()> {
        let n = n.max(2);
        let (a, b) = self.domain();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "dx", "ddx"])?;
        for i in 0..n {
            let t = if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            };
            let seg = self.segment(self.locate(t));
            w.serialize((t, seg.value(t), seg.derivative(t), seg.second_derivative(t)))?;
        }
        w.flush()?;
        Ok(())
    }
}
