#![allow(dead_code)]

use monosmooth::kernel::{self, IntervalParams};
use monosmooth::{Boundary, DataPoint, ProblemSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Interval parameters with scales spread over several decades, roughly half
/// of them in each regime.
pub fn random_params(rng: &mut impl Rng) -> IntervalParams {
    let dt = log_uniform(rng, 1e-2, 1e1);
    let vl = log_uniform(rng, 1e-3, 1e2);
    let vr = log_uniform(rng, 1e-3, 1e2);
    let th = kernel::monotone_threshold(vl, vr, dt);
    let dx = th * log_uniform(rng, 1e-2, 1e2);
    IntervalParams::new(dx, vl, vr, dt).unwrap()
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `∫ u(t)² dt` over the interval by quadrature of the control alone.
pub fn integrated_energy(p: &IntervalParams) -> f64 {
    let u = |t: f64| kernel::control(p, t).unwrap().powi(2);
    // scale for the absolute tolerance: a crude first estimate
    let crude = adaptive_simpson(&u, 0.0, p.dt, f64::INFINITY).abs();
    adaptive_simpson(&u, 0.0, p.dt, 1e-12 * crude.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataShape {
    Increasing,
    Mixed,
}

/// Small random instance with data sites on a 1/8 lattice, so grids of
/// size about 4000 align with every knot.
pub fn random_instance(
    rng: &mut impl Rng,
    max_points: usize,
    shape: DataShape,
    boundary: Boundary,
) -> ProblemSpec {
    let min_points = if boundary == Boundary::FreeStart {
        3
    } else {
        2
    };
    let n = rng.gen_range(min_points..=max_points);
    let mut t = 0.0;
    let mut alpha: f64 = if boundary == Boundary::FreeStart {
        rng.gen_range(0.0..0.5)
    } else {
        0.0
    };
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.gen_range(2..=8) as f64 / 8.0;
        alpha = match shape {
            DataShape::Increasing => alpha + rng.gen_range(0.05..1.0),
            DataShape::Mixed => (alpha + rng.gen_range(-0.8..1.0)).max(0.0),
        };
        data.push(DataPoint::new(t, alpha));
    }
    let top = data.iter().map(|d| d.alpha).fold(0.0, f64::max).max(0.1);
    let x_max = if rng.gen_bool(0.3) {
        top * rng.gen_range(0.6..0.95)
    } else {
        top * rng.gen_range(1.1..3.0)
    };
    let lambda = log_uniform(rng, 1.0, 1e3);
    ProblemSpec::new(data, x_max, lambda, boundary).unwrap()
}

/// Relative gap `|a - b| / (1 + |b|)`.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
