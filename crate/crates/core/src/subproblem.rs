//! Convex subproblem for a fixed [`RegimeAssignment`]: minimize the objective
//! over knot values and slopes subject to
//!
//! * `v_i >= 0`,
//! * `x_i <= x_{i+1}`,
//! * `x_m <= x_max`,
//! * `x_0 = 0` (PinnedZero) or `x_0 >= 0` (FreeStart).
//!
//! The method is a projected Newton iteration: each step minimizes the local
//! quadratic model over the linear constraints with an active-set QP, then
//! backtracks along the step until the Armijo condition holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::isotonic;
use crate::kernel;
use crate::objective::{self, IntervalMode, Objective, RegimeAssignment};
use crate::problem::{Boundary, KnotVector, ProblemSpec};
use crate::qp::{self, LinearConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stationarity tolerance, relative to `1 + |objective|`.
    pub tol_kkt: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemResult {
    pub kv: KnotVector,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `‖z - P(z - ∇F(z))‖_∞ / (1 + |F(z)|)` at the returned point.
    pub kkt_residual: f64,
    /// Objective after each accepted step, starting at the initial point.
    pub trace: Vec<f64>,
}

/// Solves the subproblem for `assign`, starting from `warm_start` when it is
/// feasible with a finite objective.
pub fn solve_node(
    spec: &ProblemSpec,
    assign: &RegimeAssignment,
    warm_start: Option<&KnotVector>,
) -> SubproblemResult {
    solve_node_with(spec, assign, warm_start, &SolverOptions::default())
}

/// Root relaxation: every interval on the Hermite-cubic energy with no
/// monotonicity requirement inside intervals. Its optimum is a global lower
/// bound for the full problem.
pub fn fit_step1(spec: &ProblemSpec) -> SubproblemResult {
    solve_node(spec, &RegimeAssignment::all_cubic(spec), None)
}

pub fn solve_node_with(
    spec: &ProblemSpec,
    assign: &RegimeAssignment,
    warm_start: Option<&KnotVector>,
    opts: &SolverOptions,
) -> SubproblemResult {
    assert_eq!(assign.len(), spec.n_intervals(), "assignment length");
    let obj = Objective::new(spec, assign.modes());
    match warm_start.and_then(|kv| start_from(spec, &obj, assign, kv)) {
        Some(z) => {
            let warm = descend(spec, &obj, assign, z, opts);
            if warm.converged {
                return warm;
            }
            // warm starts sitting on a collapsed interval can stall at the
            // energy's kink; a cold start usually avoids it
            let cold = descend(spec, &obj, assign, default_start(spec), opts);
            if cold.converged || cold.objective < warm.objective {
                cold
            } else {
                warm
            }
        }
        None => descend(spec, &obj, assign, default_start(spec), opts),
    }
}

fn descend(
    spec: &ProblemSpec,
    obj: &Objective<'_>,
    assign: &RegimeAssignment,
    mut z: DVector<f64>,
    opts: &SolverOptions,
) -> SubproblemResult {
    let cons = constraints(spec);
    let mut f = obj.value(&z);
    let mut trace = vec![f];
    let mut working: Vec<usize> = Vec::new();
    let mut residual = stationarity(spec, obj, &z, f);
    let mut iterations = 0;
    let mut stalled = 0;

    while residual > opts.tol_kkt && iterations < opts.max_iter && stalled < STALL_LIMIT {
        iterations += 1;
        let g = obj.gradient(&z);
        let apex = collapsed(assign, &z);
        let accepted = if apex.is_empty() {
            let Some(p) = newton_step(obj, &z, &g, &cons, &mut working)
                .filter(|p| g.dot(p) < 0.0)
                .or_else(|| gradient_step(spec, &z, &g))
            else {
                log::debug!("no descent direction at iteration {iterations}");
                break;
            };
            armijo(spec, obj, &z, f, &p, g.dot(&p)).or_else(|| {
                // the Newton model can be poor right at a kink; retry with
                // the projected gradient
                let q = gradient_step(spec, &z, &g)?;
                armijo(spec, obj, &z, f, &q, g.dot(&q))
            })
        } else {
            // the cones reach different parts of the three-segment regime;
            // keep whichever gets furthest down
            escape_steps(spec, obj, &z, &g, &cons, &apex)
                .into_iter()
                .chain(gradient_step(spec, &z, &g))
                .filter_map(|p| armijo(spec, obj, &z, f, &p, g.dot(&p)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
        };
        let Some((z_new, f_new)) = accepted else {
            log::debug!("line search failed at iteration {iterations}, f = {f:e}");
            break;
        };
        if f - f_new <= f64::EPSILON * (1.0 + f.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        z = z_new;
        f = f_new;
        trace.push(f);
        residual = stationarity(spec, obj, &z, f);
        log::trace!("iteration {iterations}: f {f:.15e} residual {residual:.3e}");
    }

    SubproblemResult {
        kv: objective::unpack(spec, &z),
        objective: f,
        converged: residual <= opts.tol_kkt,
        iterations,
        kkt_residual: residual,
        trace,
    }
}

/// Scaled stationarity measure of `kv` for the subproblem of `assign`.
pub fn kkt_residual(spec: &ProblemSpec, assign: &RegimeAssignment, kv: &KnotVector) -> f64 {
    let obj = Objective::new(spec, assign.modes());
    let z = objective::pack(kv);
    let f = obj.value(&z);
    stationarity(spec, &obj, &z, f)
}

fn stationarity(spec: &ProblemSpec, obj: &Objective<'_>, z: &DVector<f64>, f: f64) -> f64 {
    if !f.is_finite() {
        return f64::INFINITY;
    }
    let g = obj.gradient(z);
    let trial = z - &g;
    let projected = project(spec, &trial);
    (z - projected).amax() / (1.0 + f.abs())
}

/// Euclidean projection onto the feasible set.
pub(crate) fn project(spec: &ProblemSpec, z: &DVector<f64>) -> DVector<f64> {
    let n = spec.n_knots();
    let mut out = z.clone();
    let xs = &z.as_slice()[..n];
    match spec.boundary() {
        Boundary::PinnedZero => {
            out[0] = 0.0;
            let p = isotonic::project_monotone_box(&xs[1..], 0.0, spec.x_max());
            out.as_mut_slice()[1..n].copy_from_slice(&p);
        }
        Boundary::FreeStart => {
            let p = isotonic::project_monotone_box(xs, 0.0, spec.x_max());
            out.as_mut_slice()[..n].copy_from_slice(&p);
        }
    }
    for i in n..2 * n {
        out[i] = out[i].max(0.0);
    }
    out
}

/// Removes rounding-level constraint violations.
/// Zeroes the slopes of non-cubic intervals that start and end the step with
/// no rise. Steps out of an apex solve the cone only to rounding, and slopes
/// of 1e-17 over a zero rise would make the exact energy infinite.
fn settle(spec: &ProblemSpec, modes: &[IntervalMode], from: &DVector<f64>, z: &mut DVector<f64>) {
    let n = spec.n_knots();
    for (i, mode) in modes.iter().enumerate() {
        if *mode != IntervalMode::Cubic && from[i + 1] <= from[i] && z[i + 1] <= z[i] {
            z[n + i] = 0.0;
            z[n + i + 1] = 0.0;
        }
    }
}

fn snap(spec: &ProblemSpec, z: &mut DVector<f64>) {
    let n = spec.n_knots();
    z[0] = match spec.boundary() {
        Boundary::PinnedZero => 0.0,
        Boundary::FreeStart => z[0].max(0.0),
    };
    for i in 1..n {
        if z[i] < z[i - 1] {
            z[i] = z[i - 1];
        }
    }
    if z[n - 1] > spec.x_max() {
        z[n - 1] = spec.x_max();
        for i in (0..n - 1).rev() {
            if z[i] > z[i + 1] {
                z[i] = z[i + 1];
            }
        }
    }
    for i in n..2 * n {
        if z[i] < 0.0 {
            z[i] = 0.0;
        }
    }
}

fn constraints(spec: &ProblemSpec) -> Vec<LinearConstraint> {
    let n = spec.n_knots();
    let mut cons = Vec::with_capacity(2 * n + 2);
    cons.push(match spec.boundary() {
        Boundary::PinnedZero => LinearConstraint::eq(vec![(0, 1.0)], 0.0),
        Boundary::FreeStart => LinearConstraint::ge(vec![(0, 1.0)], 0.0),
    });
    for i in 0..n - 1 {
        cons.push(LinearConstraint::ge(vec![(i + 1, 1.0), (i, -1.0)], 0.0));
    }
    cons.push(LinearConstraint::ge(vec![(n - 1, -1.0)], -spec.x_max()));
    for i in 0..n {
        cons.push(LinearConstraint::ge(vec![(n + i, 1.0)], 0.0));
    }
    cons
}

/// Consecutive steps without measurable decrease before giving up.
const STALL_LIMIT: usize = 20;

fn newton_step(
    obj: &Objective<'_>,
    z: &DVector<f64>,
    g: &DVector<f64>,
    cons: &[LinearConstraint],
    working: &mut Vec<usize>,
) -> Option<DVector<f64>> {
    let mut h: DMatrix<f64> = obj.hessian(z);
    let diag_max = h.diagonal().amax();
    let damping = 1e-10 * (1.0 + diag_max);
    for i in 0..h.nrows() {
        h[(i, i)] += damping;
    }
    working.retain(|&j| j < cons.len());
    let sol = qp::solve(&h, g, cons, z, working)?;
    log::trace!(
        "qp: {} active-set iterations, {} active",
        sol.iterations,
        sol.working.len()
    );
    *working = sol.working;
    Some(sol.step)
}

fn gradient_step(spec: &ProblemSpec, z: &DVector<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let p = project(spec, &(z - g)) - z;
    (g.dot(&p) < 0.0).then_some(p)
}

/// Non-cubic intervals with no rise. The exact energy there is finite only
/// at zero slopes and is not differentiable: any slope needs a rise.
fn collapsed(assign: &RegimeAssignment, z: &DVector<f64>) -> Vec<usize> {
    assign
        .modes()
        .iter()
        .enumerate()
        .filter(|&(i, mode)| *mode != IntervalMode::Cubic && z[i + 1] - z[i] <= 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Newton steps out of collapsed intervals, one per cone. Each collapsed
/// interval `i` is held in the cone `dx >= c (vl + vr)`: for `c = dt/3` this
/// is inside the cubic regime, where the model is exact; smaller `c` reaches
/// further into the three-segment regime. The energy is homogeneous of
/// degree two, so it is a smooth quadratic along any step ray inside a cone.
fn escape_steps(
    spec: &ProblemSpec,
    obj: &Objective<'_>,
    z: &DVector<f64>,
    g: &DVector<f64>,
    base: &[LinearConstraint],
    apex: &[usize],
) -> Vec<DVector<f64>> {
    let n = spec.n_knots();
    let knots = spec.knots();
    (0..7)
        .map(|k| 10f64.powi(-k) / 3.0)
        .filter_map(|ratio| {
            let mut cons = base.to_vec();
            for &i in apex {
                let c = ratio * (knots[i + 1] - knots[i]);
                cons.push(LinearConstraint::ge(
                    vec![(i + 1, 1.0), (i, -1.0), (n + i, -c), (n + i + 1, -c)],
                    0.0,
                ));
            }
            let mut working = Vec::new();
            newton_step(obj, z, g, &cons, &mut working)
                .filter(|p| g.dot(p) < -1e-12 * g.norm() * p.norm())
        })
        .collect()
}

fn armijo(
    spec: &ProblemSpec,
    obj: &Objective<'_>,
    z: &DVector<f64>,
    f: f64,
    p: &DVector<f64>,
    slope: f64,
) -> Option<(DVector<f64>, f64)> {
    // near the optimum the predicted decrease drops below the rounding
    // level of f. Convexity then bounds the change over a full step d by
    // F(z + d) - F(z) <= ∇F(z + d)·d, so the step is taken when that bound
    // is itself at rounding level.
    let noise = 1e3 * f64::EPSILON * (1.0 + f.abs());
    let mut alpha = 1.0;
    for _ in 0..60 {
        let mut trial = z + alpha * p;
        snap(spec, &mut trial);
        settle(spec, obj.modes(), z, &mut trial);
        let ft = obj.value(&trial);
        let sufficient = ft <= f + 1e-4 * alpha * slope;
        let at_noise = alpha == 1.0
            && -slope <= noise
            && ft <= f + noise
            && ft.is_finite()
            && obj.gradient(&trial).dot(&(&trial - z)) <= noise;
        if ft.is_finite() && (sufficient || at_noise) {
            return Some((trial, ft));
        }
        alpha *= 0.5;
    }
    None
}

fn start_from(
    spec: &ProblemSpec,
    obj: &Objective<'_>,
    assign: &RegimeAssignment,
    kv: &KnotVector,
) -> Option<DVector<f64>> {
    if kv.knots.as_slice() != spec.knots() {
        return None;
    }
    let mut z = objective::pack(kv);
    let projected = project(spec, &z);
    if (&projected - &z).amax() > 1e-9 * (1.0 + z.amax()) {
        return None;
    }
    snap(spec, &mut z);
    let f = obj.value(&z);
    let mut repaired = z.clone();
    shrink_slopes(spec, assign, &mut repaired);
    let fr = obj.value(&repaired);
    if fr.is_finite() && (fr < f || !f.is_finite()) {
        Some(repaired)
    } else {
        f.is_finite().then_some(z)
    }
}

/// A parent node's knot vector may rise by almost nothing over an interval
/// while carrying positive slopes; the exact energy there is enormous. Scale
/// such slopes down into the cubic regime so the start is well conditioned.
fn shrink_slopes(spec: &ProblemSpec, assign: &RegimeAssignment, z: &mut DVector<f64>) {
    let n = spec.n_knots();
    let knots = spec.knots();
    for _ in 0..4 {
        let mut changed = false;
        for (i, mode) in assign.modes().iter().enumerate() {
            if *mode == IntervalMode::Cubic {
                continue;
            }
            let dx = (z[i + 1] - z[i]).max(0.0);
            let th = kernel::monotone_threshold(z[n + i], z[n + i + 1], knots[i + 1] - knots[i]);
            if dx < th {
                let s = dx / th;
                z[n + i] *= s;
                z[n + i + 1] *= s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Least-squares line through the data (through the origin when pinned),
/// clipped to `[0, x_max]` and made monotone, with zero slopes. Zero slopes
/// keep every interval energy finite whatever the assignment.
pub(crate) fn default_start(spec: &ProblemSpec) -> DVector<f64> {
    let n = spec.n_knots();
    let data = spec.data();
    let (mut sw, mut st, mut sa, mut stt, mut sta) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in data {
        sw += p.weight;
        st += p.weight * p.t;
        sa += p.weight * p.alpha;
        stt += p.weight * p.t * p.t;
        sta += p.weight * p.t * p.alpha;
    }
    let (slope, intercept) = match spec.boundary() {
        Boundary::PinnedZero => (sta / stt, 0.0),
        Boundary::FreeStart => {
            let den = sw * stt - st * st;
            if den.abs() <= f64::EPSILON * sw * stt {
                (0.0, sa / sw)
            } else {
                let b = (sw * sta - st * sa) / den;
                (b, (sa - b * st) / sw)
            }
        }
    };
    let line: Vec<f64> = spec
        .knots()
        .iter()
        .map(|&t| intercept + slope * t)
        .collect();
    let mut z = DVector::zeros(2 * n);
    let mut trial = DVector::zeros(2 * n);
    trial.as_mut_slice()[..n].copy_from_slice(&line);
    let projected = project(spec, &trial);
    z.as_mut_slice()[..n].copy_from_slice(&projected.as_slice()[..n]);
    z
}

impl SubproblemResult {
    /// Whether every interval's Hermite cubic is monotone at the solution.
    pub fn certified(&self) -> bool {
        objective::monotone_certificate(&self.kv)
    }
}

/// Convenience for the exact problem (every interval on its true energy).
pub fn solve_exact(spec: &ProblemSpec, warm_start: Option<&KnotVector>) -> SubproblemResult {
    solve_node(
        spec,
        &RegimeAssignment::uniform(spec.n_intervals(), IntervalMode::Unrestricted),
        warm_start,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DataPoint;

    #[test]
    fn exact_fit_single_point() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(1.0, 1.0)],
            1.0,
            1.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let r = solve_node(&spec, &RegimeAssignment::all_cubic(&spec), None);
        assert!(r.converged, "{r:?}");
        assert!(r.objective.abs() < 1e-12);
        assert!((r.kv.values[1] - 1.0).abs() < 1e-6);
        assert!((r.kv.slopes[0] - 1.0).abs() < 1e-6 && (r.kv.slopes[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn upper_bound_binds() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(1.0, 2.0)],
            1.0,
            1e6,
            Boundary::PinnedZero,
        )
        .unwrap();
        let r = solve_node(&spec, &RegimeAssignment::all_cubic(&spec), None);
        assert!(r.converged, "{r:?}");
        assert_eq!(r.kv.values[1], 1.0);
    }

    #[test]
    fn zero_curve_bounds_single_point_root() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(2.0, 0.7)],
            3.0,
            5.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let r = fit_step1(&spec);
        assert!(r.objective <= 0.5 * 5.0 * 0.49 + 1e-12);
    }

    #[test]
    fn residual_recomputes_exactly() {
        let spec = ProblemSpec::new(
            vec![
                DataPoint::new(1.0, 1.0),
                DataPoint::new(2.0, 0.2),
                DataPoint::new(3.0, 0.9),
            ],
            1.0,
            100.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let a = RegimeAssignment::unrestricted(&spec);
        let r = solve_node(&spec, &a, None);
        assert!(r.converged, "{r:?}");
        assert!((kkt_residual(&spec, &a, &r.kv) - r.kkt_residual).abs() <= 1e-12);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_warm_start_is_ignored() {
        let spec = ProblemSpec::new(
            vec![DataPoint::new(1.0, 0.5)],
            1.0,
            1.0,
            Boundary::PinnedZero,
        )
        .unwrap();
        let bad = KnotVector::new(vec![0.0, 1.0], vec![0.3, 2.0], vec![-1.0, 0.0]).unwrap();
        let r = solve_node(&spec, &RegimeAssignment::all_cubic(&spec), Some(&bad));
        assert!(r.converged);
        assert!(objective::feasible(&spec, &r.kv).feasible);
    }
}
