//! Finite-dimensional objective over knot values and slopes.
//!
//! `F(x, v) = 1/2 Σ_i E_i(x_{i+1} - x_i, v_i, v_{i+1}, t_{i+1} - t_i)
//!          + λ/2 Σ_j w_j (x_{k(j)} - α_j)²`
//!
//! where `E_i` is the interval energy selected by the interval's
//! [`IntervalMode`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, BranchDerivatives, IntervalParams, Regime};
use crate::problem::{Boundary, KnotVector, ProblemSpec};

/// How an interval's energy is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalMode {
    /// Hermite cubic energy, whether or not the cubic is monotone.
    Cubic,
    /// `4 S² / (9 dx)`, whether or not the interval is in that regime.
    ThreeSegment,
    /// Exact monotone energy: the branch picked by [`kernel::classify`].
    Unrestricted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegimeAssignment(pub Vec<IntervalMode>);

impl RegimeAssignment {
    pub fn uniform(n_intervals: usize, mode: IntervalMode) -> Self {
        Self(vec![mode; n_intervals])
    }

    pub fn unrestricted(spec: &ProblemSpec) -> Self {
        Self::uniform(spec.n_intervals(), IntervalMode::Unrestricted)
    }

    pub fn all_cubic(spec: &ProblemSpec) -> Self {
        Self::uniform(spec.n_intervals(), IntervalMode::Cubic)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn modes(&self) -> &[IntervalMode] {
        &self.0
    }
}

fn check_shapes(
    spec: &ProblemSpec,
    kv: &KnotVector,
    assign: Option<&RegimeAssignment>,
) -> Result<()> {
    if kv.knots.as_slice() != spec.knots() {
        return Err(Error::Shape(
            "knot vector does not match the problem's knots".into(),
        ));
    }
    if kv.values.len() != spec.n_knots() || kv.slopes.len() != spec.n_knots() {
        return Err(Error::Shape(
            "values/slopes length differs from knot count".into(),
        ));
    }
    if let Some(a) = assign {
        if a.len() != spec.n_intervals() {
            return Err(Error::Shape(format!(
                "assignment has {} entries for {} intervals",
                a.len(),
                spec.n_intervals()
            )));
        }
    }
    Ok(())
}

fn interval_energy(mode: IntervalMode, dx: f64, vl: f64, vr: f64, dt: f64) -> Result<f64> {
    match mode {
        IntervalMode::Cubic => Ok(kernel::cubic_energy(dx, vl, vr, dt)),
        IntervalMode::ThreeSegment => {
            let e = kernel::three_segment_energy(dx, vl, vr);
            if e.is_finite() {
                Ok(e)
            } else {
                Err(Error::InfeasibleInterval { vl, vr })
            }
        }
        IntervalMode::Unrestricted => kernel::cost(&IntervalParams::new(dx, vl, vr, dt)?),
    }
}

pub fn total_objective(
    spec: &ProblemSpec,
    kv: &KnotVector,
    assign: &RegimeAssignment,
) -> Result<f64> {
    check_shapes(spec, kv, Some(assign))?;
    let mut energy = 0.0;
    for (i, &mode) in assign.modes().iter().enumerate() {
        let dt = kv.knots[i + 1] - kv.knots[i];
        let dx = kv.values[i + 1] - kv.values[i];
        energy += interval_energy(mode, dx, kv.slopes[i], kv.slopes[i + 1], dt)?;
    }
    Ok(0.5 * energy + data_misfit(spec, &kv.values))
}

fn data_misfit(spec: &ProblemSpec, values: &[f64]) -> f64 {
    let off = spec.data_offset();
    let sum: f64 = spec
        .data()
        .iter()
        .enumerate()
        .map(|(j, p)| p.weight * (values[j + off] - p.alpha).powi(2))
        .sum();
    0.5 * spec.lambda() * sum
}

/// Partial derivatives of [`total_objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    /// With respect to the knot values.
    pub values: Vec<f64>,
    /// With respect to the knot slopes.
    pub slopes: Vec<f64>,
    /// Set when a three-segment energy was differentiated at a zero slope;
    /// the slope partials there are one-sided.
    pub one_sided: bool,
}

pub fn gradient(
    spec: &ProblemSpec,
    kv: &KnotVector,
    assign: &RegimeAssignment,
) -> Result<ObjectiveGradient> {
    check_shapes(spec, kv, Some(assign))?;
    let n = spec.n_knots();
    let mut one_sided = false;
    for (i, &mode) in assign.modes().iter().enumerate() {
        let dx = kv.values[i + 1] - kv.values[i];
        let (vl, vr) = (kv.slopes[i], kv.slopes[i + 1]);
        let dt = kv.knots[i + 1] - kv.knots[i];
        let branch = match mode {
            IntervalMode::Cubic => Regime::Cubic,
            IntervalMode::ThreeSegment => Regime::ThreeSegment,
            IntervalMode::Unrestricted => kernel::classify(&IntervalParams::new(dx, vl, vr, dt)?),
        };
        if branch == Regime::ThreeSegment {
            if dx <= 0.0 && vl + vr > 0.0 {
                return Err(Error::InfeasibleInterval { vl, vr });
            }
            one_sided |= vl == 0.0 || vr == 0.0;
        }
    }
    let z = pack(kv);
    let obj = Objective::new(spec, assign.modes());
    let g = obj.gradient(&z);
    Ok(ObjectiveGradient {
        values: g.as_slice()[..n].to_vec(),
        slopes: g.as_slice()[n..].to_vec(),
        one_sided,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NegativeSlope {
        index: usize,
        value: f64,
    },
    Decreasing {
        index: usize,
        left: f64,
        right: f64,
    },
    AboveBound {
        value: f64,
        x_max: f64,
    },
    /// PinnedZero requires `x_0 = 0`; FreeStart requires `x_0 >= 0`.
    Boundary {
        value: f64,
    },
    Shape(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NegativeSlope { index, value } => write!(f, "v_{index} = {value} < 0"),
            Violation::Decreasing { index, left, right } => {
                write!(f, "x_{index} = {left} > x_{} = {right}", index + 1)
            }
            Violation::AboveBound { value, x_max } => write!(f, "x_m = {value} > x_max = {x_max}"),
            Violation::Boundary { value } => {
                write!(f, "boundary condition violated by x_0 = {value}")
            }
            Violation::Shape(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

pub fn feasible(spec: &ProblemSpec, kv: &KnotVector) -> FeasibilityReport {
    let mut violations = Vec::new();
    if let Err(e) = check_shapes(spec, kv, None) {
        violations.push(Violation::Shape(e.to_string()));
        return FeasibilityReport {
            feasible: false,
            violations,
        };
    }
    for (index, &value) in kv.slopes.iter().enumerate() {
        if !(value >= 0.0) {
            violations.push(Violation::NegativeSlope { index, value });
        }
    }
    for (index, w) in kv.values.windows(2).enumerate() {
        if !(w[0] <= w[1]) {
            violations.push(Violation::Decreasing {
                index,
                left: w[0],
                right: w[1],
            });
        }
    }
    let last = *kv.values.last().expect("shape checked");
    if !(last <= spec.x_max()) {
        violations.push(Violation::AboveBound {
            value: last,
            x_max: spec.x_max(),
        });
    }
    let x0 = kv.values[0];
    let pin_ok = match spec.boundary() {
        Boundary::PinnedZero => x0 == 0.0,
        Boundary::FreeStart => x0 >= 0.0,
    };
    if !pin_ok {
        violations.push(Violation::Boundary { value: x0 });
    }
    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    }
}

/// Per-interval shortfall `threshold - dx`; positive entries mark intervals
/// whose Hermite cubic dips below zero slope.
pub fn certificate_shortfalls(kv: &KnotVector) -> Vec<f64> {
    (0..kv.n_intervals())
        .map(|i| {
            let dt = kv.knots[i + 1] - kv.knots[i];
            let dx = kv.values[i + 1] - kv.values[i];
            kernel::monotone_threshold(kv.slopes[i].max(0.0), kv.slopes[i + 1].max(0.0), dt) - dx
        })
        .collect()
}

/// True when every interval's Hermite cubic is monotone, so the all-cubic
/// curve through `kv` is globally nondecreasing.
pub fn monotone_certificate(kv: &KnotVector) -> bool {
    certificate_shortfalls(kv).iter().all(|&s| s <= 0.0)
}

/// Flattened variables `[x_0..x_m, v_0..v_m]`.
pub(crate) fn pack(kv: &KnotVector) -> DVector<f64> {
    DVector::from_iterator(
        kv.values.len() * 2,
        kv.values.iter().chain(kv.slopes.iter()).copied(),
    )
}

pub(crate) fn unpack(spec: &ProblemSpec, z: &DVector<f64>) -> KnotVector {
    let n = spec.n_knots();
    KnotVector {
        knots: spec.knots().to_vec(),
        values: z.as_slice()[..n].to_vec(),
        slopes: z.as_slice()[n..].to_vec(),
    }
}

/// Objective over the flattened variables, used by the solvers. Never fails:
/// infeasible interval energies evaluate to `+inf`.
pub(crate) struct Objective<'a> {
    spec: &'a ProblemSpec,
    modes: &'a [IntervalMode],
}

impl<'a> Objective<'a> {
    pub fn new(spec: &'a ProblemSpec, modes: &'a [IntervalMode]) -> Self {
        debug_assert_eq!(modes.len(), spec.n_intervals());
        Self { spec, modes }
    }

    pub(crate) fn modes(&self) -> &[IntervalMode] {
        self.modes
    }

    fn n(&self) -> usize {
        self.spec.n_knots()
    }

    fn branch(&self, i: usize, dx: f64, vl: f64, vr: f64, dt: f64) -> Regime {
        match self.modes[i] {
            IntervalMode::Cubic => Regime::Cubic,
            IntervalMode::ThreeSegment => Regime::ThreeSegment,
            IntervalMode::Unrestricted => {
                if dx >= kernel::monotone_threshold(vl.max(0.0), vr.max(0.0), dt) {
                    Regime::Cubic
                } else {
                    Regime::ThreeSegment
                }
            }
        }
    }

    fn local(&self, z: &DVector<f64>, i: usize) -> (f64, f64, f64, f64) {
        let n = self.n();
        let knots = self.spec.knots();
        (
            z[i + 1] - z[i],
            z[n + i],
            z[n + i + 1],
            knots[i + 1] - knots[i],
        )
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let mut energy = 0.0;
        for i in 0..self.modes.len() {
            let (dx, vl, vr, dt) = self.local(z, i);
            energy += match self.branch(i, dx, vl, vr, dt) {
                Regime::Cubic => kernel::cubic_energy(dx, vl, vr, dt),
                Regime::ThreeSegment => kernel::three_segment_energy(dx, vl, vr),
            };
        }
        0.5 * energy + data_misfit(self.spec, &z.as_slice()[..self.n()])
    }

    fn derivatives(&self, z: &DVector<f64>, i: usize) -> BranchDerivatives {
        let (dx, vl, vr, dt) = self.local(z, i);
        match self.branch(i, dx, vl, vr, dt) {
            Regime::Cubic => kernel::cubic_derivatives(dx, vl, vr, dt),
            Regime::ThreeSegment => {
                if vl.max(0.0) + vr.max(0.0) == 0.0 {
                    BranchDerivatives {
                        value: 0.0,
                        grad: [0.0; 3],
                        hess: [[0.0; 3]; 3],
                    }
                } else {
                    kernel::three_segment_derivatives(dx, vl, vr)
                }
            }
        }
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut g = DVector::zeros(2 * n);
        for i in 0..self.modes.len() {
            let d = self.derivatives(z, i);
            g[i] -= 0.5 * d.grad[0];
            g[i + 1] += 0.5 * d.grad[0];
            g[n + i] += 0.5 * d.grad[1];
            g[n + i + 1] += 0.5 * d.grad[2];
        }
        let off = self.spec.data_offset();
        let lambda = self.spec.lambda();
        for (j, p) in self.spec.data().iter().enumerate() {
            let k = j + off;
            g[k] += lambda * p.weight * (z[k] - p.alpha);
        }
        g
    }

    pub fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..self.modes.len() {
            let d = self.derivatives(z, i);
            // local variable order (x_i, x_{i+1}, v_i, v_{i+1}); (dx, vl, vr) = J * local
            let idx = [i, i + 1, n + i, n + i + 1];
            let jac: [[f64; 4]; 3] = [
                [-1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ];
            for a in 0..4 {
                for b in 0..4 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += jac[p][a] * d.hess[p][q] * jac[q][b];
                        }
                    }
                    h[(idx[a], idx[b])] += 0.5 * s;
                }
            }
        }
        let off = self.spec.data_offset();
        for (j, p) in self.spec.data().iter().enumerate() {
            let k = j + off;
            h[(k, k)] += self.spec.lambda() * p.weight;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DataPoint;
    use approx::assert_relative_eq;

    fn one_point() -> ProblemSpec {
        ProblemSpec::new(
            vec![DataPoint::new(1.0, 1.0)],
            1.0,
            1.0,
            Boundary::PinnedZero,
        )
        .unwrap()
    }

    fn kv(knots: &[f64], x: &[f64], v: &[f64]) -> KnotVector {
        KnotVector::new(knots.to_vec(), x.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn objective_examples() {
        let spec = one_point();
        let a = RegimeAssignment::unrestricted(&spec);
        let line = kv(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]);
        assert!(total_objective(&spec, &line, &a).unwrap().abs() < 1e-14);
        let zero = kv(&[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(total_objective(&spec, &zero, &a).unwrap(), 0.5);
    }

    #[test]
    fn forced_three_segment_contribution() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(1.0, 0.0), DataPoint::new(2.0, 0.5)],
            1.0,
            2.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let k = kv(&[0.0, 1.0, 2.0], &[0.0, 0.1, 0.4], &[1.0, 1.0, 0.3]);
        let assign = RegimeAssignment(vec![IntervalMode::ThreeSegment, IntervalMode::Cubic]);
        let data = 0.5 * 2.0 * (0.1f64.powi(2) + 0.1f64.powi(2));
        let second = kernel::cubic_energy(0.3, 1.0, 0.3, 1.0);
        let expected = data + 0.5 * 160.0 / 9.0 + 0.5 * second;
        assert_relative_eq!(
            total_objective(&spec, &k, &assign).unwrap(),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn straight_line_gradient_vanishes() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(1.0, 0.5), DataPoint::new(3.0, 1.5)],
            2.0,
            10.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let k = kv(&[0.0, 1.0, 3.0], &[0.0, 0.5, 1.5], &[0.5, 0.5, 0.5]);
        let g = gradient(&spec, &k, &RegimeAssignment::unrestricted(&spec)).unwrap();
        for v in g.values.iter().chain(&g.slopes) {
            assert!(v.abs() < 1e-12, "{g:?}");
        }
        assert!(!g.one_sided);
    }

    #[test]
    fn gradient_flags_zero_slope_three_segment() {
        let spec = one_point();
        let k = kv(&[0.0, 1.0], &[0.0, 0.1], &[0.0, 1.0]);
        let g = gradient(&spec, &k, &RegimeAssignment::unrestricted(&spec)).unwrap();
        assert!(g.one_sided);
        let flat = kv(&[0.0, 1.0], &[0.0, 0.0], &[0.0, 1.0]);
        assert!(gradient(&spec, &flat, &RegimeAssignment::unrestricted(&spec)).is_err());
    }

    #[test]
    fn cubic_dx_partial_by_differences() {
        let f = |dx: f64| kernel::cubic_energy(dx, 0.0, 0.0, 1.0);
        let h = 1e-6;
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let d = kernel::cubic_derivatives(1.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(d.grad[0], fd, max_relative = 1e-8);
        assert_relative_eq!(d.grad[0], 24.0, max_relative = 1e-12);
    }

    #[test]
    fn feasibility_examples() {
        let spec = one_point();
        assert!(feasible(&spec, &kv(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 1.0])).feasible);
        let r = feasible(&spec, &kv(&[0.0, 1.0], &[0.0, 1.1], &[1.0, 1.0]));
        assert!(!r.feasible);
        assert!(matches!(r.violations[0], Violation::AboveBound { .. }));

        let spec2 = ProblemSpec::new(
            vec![DataPoint::new(1.0, 0.5), DataPoint::new(2.0, 0.4)],
            1.0,
            1.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let r = feasible(
            &spec2,
            &kv(&[0.0, 1.0, 2.0], &[0.0, 0.5, 0.4], &[0.0, 0.0, 0.0]),
        );
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(
            r.violations[0],
            Violation::Decreasing { index: 1, .. }
        ));
        let r = feasible(
            &spec2,
            &kv(&[0.0, 1.0, 2.0], &[0.1, 0.5, 0.6], &[-1.0, 0.0, 0.0]),
        );
        assert_eq!(r.violations.len(), 2);
    }

    #[test]
    fn certificate_examples() {
        assert!(monotone_certificate(&kv(
            &[0.0, 1.0],
            &[0.0, 1.0],
            &[1.0, 1.0]
        )));
        assert!(!monotone_certificate(&kv(
            &[0.0, 1.0],
            &[0.0, 0.1],
            &[1.0, 1.0]
        )));
        let knots: Vec<f64> = (0..20).map(|i| i as f64 * 0.37).collect();
        let values: Vec<f64> = knots.iter().map(|t| 2.5 * t).collect();
        assert!(monotone_certificate(&kv(&knots, &values, &[2.5; 20])));
    }
}
