//! Problem definition: data, bounds, boundary mode and the knot layout shared
//! by every solver in the crate.
//!
//! Under [`Boundary::PinnedZero`] a data-free knot at `t = 0` is prepended and
//! the curve is forced through the origin. Under [`Boundary::FreeStart`] the
//! first knot is the first data abscissa and its value is only required to be
//! nonnegative.
//!
//! Abscissae and ordinates are used in whatever units the caller supplies. The
//! objective is not scale invariant, so rescaling `t` changes the balance
//! between bending energy and data fidelity for a fixed `lambda`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub t: f64,
    pub alpha: f64,
    pub weight: f64,
}

impl DataPoint {
    pub fn new(t: f64, alpha: f64) -> Self {
        Self {
            t,
            alpha,
            weight: 1.0,
        }
    }

    pub fn weighted(t: f64, alpha: f64, weight: f64) -> Self {
        Self { t, alpha, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// `x(0) = 0`, with a data-free knot at the origin.
    PinnedZero,
    /// `x(t_0) >= 0` at the first data abscissa.
    FreeStart,
}

/// A validated fitting problem.
///
/// Fields are private so that every value of this type has passed
/// [`ProblemSpec::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    data: Vec<DataPoint>,
    x_max: f64,
    lambda: f64,
    boundary: Boundary,
    knots: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(data: Vec<DataPoint>, x_max: f64, lambda: f64, boundary: Boundary) -> Result<Self> {
        check(&data, x_max, lambda, boundary)?;
        let knots = layout(&data, boundary);
        Ok(Self {
            data,
            x_max,
            lambda,
            boundary,
            knots,
        })
    }

    /// Re-checks every invariant and returns the canonical form. Idempotent.
    pub fn validate(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(self.data.clone(), self.x_max, self.lambda, self.boundary)
    }

    pub fn data(&self) -> &[DataPoint] {
        &self.data
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Knot abscissae `t_0 < ... < t_m`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Knot index carrying data point `i`.
    pub fn data_knot(&self, i: usize) -> usize {
        i + self.data_offset()
    }

    pub(crate) fn data_offset(&self) -> usize {
        match self.boundary {
            Boundary::PinnedZero => 1,
            Boundary::FreeStart => 0,
        }
    }

    /// Right endpoint `T`.
    pub fn t_end(&self) -> f64 {
        *self.knots.last().expect("validated spec has knots")
    }

    pub fn t_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ProblemSpec::new(self.data.clone(), self.x_max, lambda, self.boundary)
    }

    pub fn with_upper_bound(&self, x_max: f64) -> Result<Self> {
        ProblemSpec::new(self.data.clone(), x_max, self.lambda, self.boundary)
    }
}

fn check(data: &[DataPoint], x_max: f64, lambda: f64, boundary: Boundary) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if boundary == Boundary::FreeStart && data.len() < 2 {
        return Err(Error::InsufficientData(data.len()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(Error::InvalidUpperBound(x_max));
    }
    for (index, p) in data.iter().enumerate() {
        if !(p.t.is_finite() && p.alpha.is_finite() && p.weight.is_finite()) {
            return Err(Error::NonFinite(index));
        }
        if p.weight <= 0.0 {
            return Err(Error::NonPositiveWeight {
                index,
                weight: p.weight,
            });
        }
    }
    for (index, pair) in data.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(Error::Unsorted {
                index: index + 1,
                previous: pair[0].t,
                current: pair[1].t,
            });
        }
    }
    if boundary == Boundary::PinnedZero && data[0].t <= 0.0 {
        return Err(Error::PinnedCollision(data[0].t));
    }
    Ok(())
}

fn layout(data: &[DataPoint], boundary: Boundary) -> Vec<f64> {
    let mut knots = Vec::with_capacity(data.len() + 1);
    if boundary == Boundary::PinnedZero {
        knots.push(0.0);
    }
    knots.extend(data.iter().map(|p| p.t));
    knots
}

/// Decision variables of the finite-dimensional problem: value and slope at
/// every knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() != slopes.len() {
            return Err(Error::Shape(format!(
                "knots/values/slopes lengths {}/{}/{}",
                knots.len(),
                values.len(),
                slopes.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::Shape("need at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Shape("knots must be strictly increasing".into()));
        }
        Ok(Self {
            knots,
            values,
            slopes,
        })
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Largest absolute difference in values and slopes.
    pub fn max_abs_diff(&self, other: &KnotVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .chain(self.slopes.iter().zip(&other.slopes))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Reads `t,alpha[,weight]` records. `weight_column` overrides the name of the
/// weight column; a missing weight column means unit weights.
pub fn read_data_csv(
    path: impl AsRef<Path>,
    weight_column: Option<&str>,
) -> Result<Vec<DataPoint>> {
    let file = std::fs::File::open(path)?;
    read_data(file, weight_column)
}

pub fn read_data<R: std::io::Read>(
    reader: R,
    weight_column: Option<&str>,
) -> Result<Vec<DataPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("t").ok_or_else(|| Error::Shape("missing `t` column".into()))?;
    let a_col = find("alpha").ok_or_else(|| Error::Shape("missing `alpha` column".into()))?;
    let w_name = weight_column.unwrap_or("weight");
    let w_col = find(w_name);
    if weight_column.is_some() && w_col.is_none() {
        return Err(Error::Shape(format!("missing `{w_name}` column")));
    }
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Shape(format!("row {}: cannot parse `{raw}` as a number", row + 1))
            })
        };
        let weight = match w_col {
            Some(c) if !record.get(c).unwrap_or("").is_empty() => field(c)?,
            _ => 1.0,
        };
        out.push(DataPoint::weighted(field(t_col)?, field(a_col)?, weight));
    }
    Ok(out)
}
