//! Distribution estimation: binned samples become cumulative data on the bin
//! right edges, the fitted monotone curve (bounded by 1) estimates the CDF and
//! its derivative the density.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Boundary, DataPoint, ProblemSpec};
use crate::spline::SplineCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl HistogramSpec {
    /// `edges` has one more entry than `counts`.
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || edges.len() != counts.len() + 1 {
            return Err(Error::InvalidHistogram(format!(
                "{} edges for {} bins",
                edges.len(),
                counts.len()
            )));
        }
        if let Some(i) = edges.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidHistogram(format!("edge {i} is not finite")));
        }
        if let Some(i) = edges.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidHistogram(format!(
                "edges not strictly increasing at {}",
                i + 1
            )));
        }
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::InvalidHistogram("all counts are zero".into()));
        }
        Ok(Self { edges, counts })
    }

    /// `bins` equal-width bins over `[min, max]` of the samples; the last bin
    /// is closed on the right.
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateSamples(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if bins < 2 {
            return Err(Error::InvalidHistogram(format!(
                "need at least 2 bins, got {bins}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::DegenerateSamples(format!("all samples equal {lo}")));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
        edges.push(hi);
        let mut counts = vec![0u64; bins];
        for &s in samples {
            // search the edges rather than divide, so rounding never files a
            // sample on the wrong side of an edge
            let k = edges[1..bins].partition_point(|&e| e <= s);
            counts[k] += 1;
        }
        Self::new(edges, counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cumulative fractions at the bin right edges, unit weights.
    pub fn cumulative_data(&self) -> Vec<DataPoint> {
        let total = self.total() as f64;
        let mut running = 0u64;
        self.counts
            .iter()
            .zip(&self.edges[1..])
            .map(|(&c, &edge)| {
                running += c;
                DataPoint::new(edge, running as f64 / total)
            })
            .collect()
    }

    /// CDF fitting problem: `x_max = 1`, free start.
    pub fn to_problem(&self, lambda: f64) -> Result<ProblemSpec> {
        ProblemSpec::new(self.cumulative_data(), 1.0, lambda, Boundary::FreeStart)
    }

    /// Reads `edge_left,edge_right,count` records; bins must be contiguous.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn read<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            edge_left: f64,
            edge_right: f64,
            count: u64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            match edges.last() {
                None => edges.push(row.edge_left),
                Some(&prev) if prev != row.edge_left => {
                    return Err(Error::InvalidHistogram(format!(
                        "bin {i} starts at {} but the previous bin ends at {prev}",
                        row.edge_left
                    )));
                }
                Some(_) => {}
            }
            edges.push(row.edge_right);
            counts.push(row.count);
        }
        Self::new(edges, counts)
    }
}

/// Bins `samples` and builds the CDF fitting problem.
pub fn samples_to_cdf_data(samples: &[f64], bins: usize, lambda: f64) -> Result<ProblemSpec> {
    HistogramSpec::from_samples(samples, bins)?.to_problem(lambda)
}

/// Reads one sample per line. A first line that does not parse is taken as
/// a header; blank lines are skipped.
pub fn read_samples<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        if raw.is_empty() {
            continue;
        }
        match raw.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if line == 0 => {}
            Err(_) => {
                return Err(Error::Shape(format!(
                    "line {}: cannot parse `{raw}` as a number",
                    line + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_samples(std::fs::File::open(path)?)
}

/// Density estimate: the exact derivative of the fitted CDF.
pub fn density(curve: &SplineCurve) -> SplineCurve {
    curve.derivative()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn four_samples_two_bins() {
        let h = HistogramSpec::from_samples(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.edges(), &[0.0, 1.5, 3.0]);
        assert_eq!(h.counts(), &[2, 2]);
        let spec = h.to_problem(1.0).unwrap();
        let alpha: Vec<f64> = spec.data().iter().map(|d| d.alpha).collect();
        assert_eq!(alpha, vec![0.5, 1.0]);
        assert_eq!(spec.boundary(), Boundary::FreeStart);
        assert_eq!(spec.x_max(), 1.0);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(matches!(
            samples_to_cdf_data(&[], 5, 1.0),
            Err(Error::DegenerateSamples(_))
        ));
        assert!(matches!(
            samples_to_cdf_data(&[2.0; 10], 5, 1.0),
            Err(Error::DegenerateSamples(_))
        ));
        assert!(samples_to_cdf_data(&[0.0, 1.0], 1, 1.0).is_err());
        assert!(samples_to_cdf_data(&[0.0, f64::NAN], 2, 1.0).is_err());
    }

    #[test]
    fn maximum_lands_in_last_bin() {
        let s: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let h = HistogramSpec::from_samples(&s, 3).unwrap();
        assert_eq!(h.total(), 11);
        assert_eq!(*h.edges().last().unwrap(), 1.0);
    }

    #[test]
    fn histogram_csv() {
        let text = "edge_left,edge_right,count\n0,1,3\n1,2,1\n";
        let h = HistogramSpec::read(text.as_bytes()).unwrap();
        assert_eq!(h.edges(), &[0.0, 1.0, 2.0]);
        let gap = "edge_left,edge_right,count\n0,1,3\n1.5,2,1\n";
        assert!(HistogramSpec::read(gap.as_bytes()).is_err());
        let zero = "edge_left,edge_right,count\n0,1,0\n";
        assert!(HistogramSpec::read(zero.as_bytes()).is_err());
    }

    #[test]
    fn sample_reader_skips_header() {
        let v = read_samples("value\n1.5\n\n-2\n".as_bytes()).unwrap();
        assert_eq!(v, vec![1.5, -2.0]);
        assert!(read_samples("1\nx\n".as_bytes()).is_err());
    }

    #[test]
    fn density_of_smoothstep() {
        let c = SplineCurve::new(vec![0.0, 1.0], vec![[0.0, 0.0, 3.0, -2.0]]).unwrap();
        let d = density(&c);
        assert_relative_eq!(d.value(0.5), 1.5, epsilon = 1e-15);
        assert_relative_eq!(d.value(0.25), 6.0 * 0.25 - 6.0 * 0.0625, epsilon = 1e-15);
        assert_relative_eq!(d.integral(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn density_of_linear_and_plateau() {
        let lin = SplineCurve::new(vec![0.0, 1.0], vec![[0.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(density(&lin).value(0.3), 1.0);
        let flat = SplineCurve::new(
            vec![0.0, 1.0, 2.0],
            vec![[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(density(&flat).value(1.5), 0.0);
    }
}
