//! Closed-form minimum-energy curves on a single interval.
//!
//! For one interval translated to start at the origin, the problem is: find
//! `x` on `[0, dt]` with `x(0) = 0`, `x(dt) = dx`, `x'(0) = vl`, `x'(dt) = vr`
//! and `x' >= 0` minimizing `∫ x''²`. There are two regimes.
//!
//! * [`Regime::Cubic`]: `dx >= (dt/3)(vl + vr - sqrt(vl*vr))`. The unconstrained
//!   Hermite cubic is already monotone and is optimal.
//! * [`Regime::ThreeSegment`]: otherwise. The optimum is cubic, then flat, then
//!   cubic, with `x'' = 0` on the flat part and breakpoints
//!   `tau1 = 3 dx sqrt(vl) / S`, `tau2 = dt - 3 dx sqrt(vr) / S` where
//!   `S = vl^{3/2} + vr^{3/2}`. Its energy is `4 S² / (9 dx)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    /// Rise across the interval.
    pub dx: f64,
    /// Slope at the left end.
    pub vl: f64,
    /// Slope at the right end.
    pub vr: f64,
    /// Interval length.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Cubic,
    ThreeSegment,
}

/// One polynomial piece `c0 + c1 s + c2 s² + c3 s³` with `s = t - t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl CubicSegment {
    pub fn value(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        self.c0 + s * (self.c1 + s * (self.c2 + s * self.c3))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        self.c1 + s * (2.0 * self.c2 + s * 3.0 * self.c3)
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        2.0 * self.c2 + 6.0 * self.c3 * s
    }

    /// Shifts the segment by `(t0, x0)`.
    pub fn translated(mut self, t0: f64, x0: f64) -> Self {
        self.t_start += t0;
        self.t_end += t0;
        self.c0 += x0;
        self
    }
}

impl IntervalParams {
    pub fn new(dx: f64, vl: f64, vr: f64, dt: f64) -> Result<Self> {
        let p = Self { dx, vl, vr, dt };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let finite = [self.dx, self.vl, self.vr, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.dt <= 0.0 || self.dx < 0.0 || self.vl < 0.0 || self.vr < 0.0 {
            return Err(Error::InvalidInterval(format!("{self:?}")));
        }
        Ok(())
    }

    /// Smallest rise for which the single cubic is monotone.
    pub fn threshold(&self) -> f64 {
        monotone_threshold(self.vl, self.vr, self.dt)
    }
}

/// `(dt/3)(vl + vr - sqrt(vl*vr))`.
pub fn monotone_threshold(vl: f64, vr: f64, dt: f64) -> f64 {
    dt / 3.0 * (vl + vr - (vl * vr).sqrt())
}

pub fn classify(p: &IntervalParams) -> Regime {
    if p.dx >= p.threshold() {
        Regime::Cubic
    } else {
        Regime::ThreeSegment
    }
}

/// Minimal `∫ x''²` over the interval.
pub fn cost(p: &IntervalParams) -> Result<f64> {
    p.check()?;
    match classify(p) {
        Regime::Cubic => Ok(cubic_energy(p.dx, p.vl, p.vr, p.dt)),
        Regime::ThreeSegment => {
            if p.dx == 0.0 {
                return Err(Error::InfeasibleInterval { vl: p.vl, vr: p.vr });
            }
            Ok(three_segment_energy(p.dx, p.vl, p.vr))
        }
    }
}

/// Energy of the unconstrained Hermite cubic. Defined for any arguments.
pub fn cubic_energy(dx: f64, vl: f64, vr: f64, dt: f64) -> f64 {
    let dt2 = dt * dt;
    4.0 * ((vl * vl + vr * vr + vl * vr) * dt2 - 3.0 * dx * (vl + vr) * dt + 3.0 * dx * dx)
        / (dt2 * dt)
}

/// Energy of the cubic-flat-cubic curve, `4 S² / (9 dx)`. Returns `+inf` when
/// `dx <= 0` and a slope is positive, and `0` when both slopes vanish.
pub fn three_segment_energy(dx: f64, vl: f64, vr: f64) -> f64 {
    let s = vl.max(0.0).powf(1.5) + vr.max(0.0).powf(1.5);
    if s == 0.0 {
        return 0.0;
    }
    if dx <= 0.0 {
        return f64::INFINITY;
    }
    4.0 * s * s / (9.0 * dx)
}

/// Value, gradient and Hessian of one energy branch with respect to
/// `(dx, vl, vr)` at fixed `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchDerivatives {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

// Floor for sqrt(v) in the three-segment Hessian; the true curvature in v
// grows like v^{-1/2} at the bound.
const SQRT_FLOOR: f64 = 1e-8;

pub fn cubic_derivatives(dx: f64, vl: f64, vr: f64, dt: f64) -> BranchDerivatives {
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let grad = [
        4.0 * (6.0 * dx - 3.0 * (vl + vr) * dt) / dt3,
        4.0 * ((2.0 * vl + vr) * dt2 - 3.0 * dx * dt) / dt3,
        4.0 * ((2.0 * vr + vl) * dt2 - 3.0 * dx * dt) / dt3,
    ];
    let a = 24.0 / dt3;
    let b = -12.0 / dt2;
    let c = 8.0 / dt;
    let d = 4.0 / dt;
    BranchDerivatives {
        value: cubic_energy(dx, vl, vr, dt),
        grad,
        hess: [[a, b, b], [b, c, d], [b, d, c]],
    }
}

/// Derivatives of `4 S² / (9 dx)`. Requires `dx > 0`.
pub fn three_segment_derivatives(dx: f64, vl: f64, vr: f64) -> BranchDerivatives {
    let vl = vl.max(0.0);
    let vr = vr.max(0.0);
    let (rl, rr) = (vl.sqrt(), vr.sqrt());
    let s = vl * rl + vr * rr;
    let value = 4.0 * s * s / (9.0 * dx);
    let grad = [
        -4.0 * s * s / (9.0 * dx * dx),
        4.0 * s * rl / (3.0 * dx),
        4.0 * s * rr / (3.0 * dx),
    ];
    let h_dd = 8.0 * s * s / (9.0 * dx * dx * dx);
    let h_dl = -4.0 * s * rl / (3.0 * dx * dx);
    let h_dr = -4.0 * s * rr / (3.0 * dx * dx);
    let h_ll = 4.0 / (3.0 * dx) * (1.5 * vl + s / (2.0 * rl.max(SQRT_FLOOR)));
    let h_rr = 4.0 / (3.0 * dx) * (1.5 * vr + s / (2.0 * rr.max(SQRT_FLOOR)));
    let h_lr = 2.0 * rl * rr / dx;
    BranchDerivatives {
        value,
        grad,
        hess: [[h_dd, h_dl, h_dr], [h_dl, h_ll, h_lr], [h_dr, h_lr, h_rr]],
    }
}

struct ThreeSegmentShape {
    s: f64,
    tau1: f64,
    tau2: f64,
    plateau: f64,
}

fn three_segment_shape(p: &IntervalParams) -> ThreeSegmentShape {
    let (rl, rr) = (p.vl.sqrt(), p.vr.sqrt());
    let s = p.vl * rl + p.vr * rr;
    let tau1 = 3.0 * p.dx * rl / s;
    let tau2 = (p.dt - 3.0 * p.dx * rr / s).max(tau1);
    ThreeSegmentShape {
        s,
        tau1,
        tau2,
        plateau: p.dx * p.vl * rl / s,
    }
}

/// Optimal control `u = x''` at local abscissa `t ∈ [0, dt]`.
pub fn control(p: &IntervalParams, t: f64) -> Result<f64> {
    p.check()?;
    if !(0.0..=p.dt).contains(&t) {
        return Err(Error::InvalidInterval(format!(
            "t = {t} outside [0, {}]",
            p.dt
        )));
    }
    let IntervalParams { dx, vl, vr, dt } = *p;
    match classify(p) {
        Regime::Cubic => {
            let dt2 = dt * dt;
            Ok(
                (6.0 * (vl + vr) / dt2 - 12.0 * dx / (dt2 * dt)) * t + 6.0 * dx / dt2
                    - 4.0 * vl / dt
                    - 2.0 * vr / dt,
            )
        }
        Regime::ThreeSegment => {
            if dx == 0.0 {
                return Err(Error::InfeasibleInterval { vl, vr });
            }
            let sh = three_segment_shape(p);
            let k = 2.0 * sh.s * sh.s / (9.0 * dx * dx);
            Ok(if t < sh.tau1 {
                k * (t - sh.tau1)
            } else if t <= sh.tau2 {
                0.0
            } else {
                k * (t - sh.tau2)
            })
        }
    }
}

/// Optimal curve on `[0, dt]` as one (Cubic) or up to three (ThreeSegment)
/// polynomial pieces. Zero-width pieces are dropped.
pub fn build_curve(p: &IntervalParams) -> Result<Vec<CubicSegment>> {
    p.check()?;
    let IntervalParams { dx, vl, vr, dt } = *p;
    match classify(p) {
        Regime::Cubic => {
            let dt2 = dt * dt;
            Ok(vec![CubicSegment {
                t_start: 0.0,
                t_end: dt,
                c0: 0.0,
                c1: vl,
                c2: 3.0 * dx / dt2 - (2.0 * vl + vr) / dt,
                c3: (vl + vr) / dt2 - 2.0 * dx / (dt2 * dt),
            }])
        }
        Regime::ThreeSegment => {
            if dx == 0.0 {
                return Err(Error::InfeasibleInterval { vl, vr });
            }
            let sh = three_segment_shape(p);
            let k = sh.s * sh.s / (27.0 * dx * dx);
            let mut out = Vec::with_capacity(3);
            if sh.tau1 > 0.0 {
                let t1 = sh.tau1;
                out.push(CubicSegment {
                    t_start: 0.0,
                    t_end: t1,
                    c0: sh.plateau - k * t1 * t1 * t1,
                    c1: 3.0 * k * t1 * t1,
                    c2: -3.0 * k * t1,
                    c3: k,
                });
            }
            if sh.tau2 > sh.tau1 {
                out.push(CubicSegment {
                    t_start: sh.tau1,
                    t_end: sh.tau2,
                    c0: sh.plateau,
                    c1: 0.0,
                    c2: 0.0,
                    c3: 0.0,
                });
            }
            if dt > sh.tau2 {
                out.push(CubicSegment {
                    t_start: sh.tau2,
                    t_end: dt,
                    c0: sh.plateau,
                    c1: 0.0,
                    c2: 0.0,
                    c3: k,
                });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(dx: f64, vl: f64, vr: f64, dt: f64) -> IntervalParams {
        IntervalParams::new(dx, vl, vr, dt).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&p(1.0, 0.0, 0.0, 1.0)), Regime::Cubic);
        assert_eq!(classify(&p(0.1, 1.0, 1.0, 1.0)), Regime::ThreeSegment);
        // tie goes to the cubic branch
        let q = IntervalParams {
            dx: monotone_threshold(1.0, 1.0, 1.0),
            vl: 1.0,
            vr: 1.0,
            dt: 1.0,
        };
        assert_eq!(classify(&q), Regime::Cubic);
    }

    #[test]
    fn cost_examples() {
        assert_relative_eq!(cost(&p(1.0, 0.0, 0.0, 1.0)).unwrap(), 12.0, epsilon = 1e-12);
        for v in [0.0, 0.3, 2.0] {
            for dt in [0.5, 1.0, 3.0] {
                assert!(cost(&p(v * dt, v, v, dt)).unwrap().abs() < 1e-12);
            }
        }
        assert_relative_eq!(
            cost(&p(0.1, 1.0, 1.0, 1.0)).unwrap(),
            160.0 / 9.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_rise_with_slopes_is_infeasible() {
        assert!(matches!(
            cost(&p(0.0, 1.0, 0.0, 1.0)),
            Err(Error::InfeasibleInterval { .. })
        ));
        assert!(build_curve(&p(0.0, 0.0, 2.0, 1.0)).is_err());
        // flat and still
        assert_eq!(cost(&p(0.0, 0.0, 0.0, 1.0)).unwrap(), 0.0);
        let segs = build_curve(&p(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].value(0.7), 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(IntervalParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(IntervalParams::new(-1.0, 0.0, 0.0, 1.0).is_err());
        assert!(IntervalParams::new(1.0, -0.1, 0.0, 1.0).is_err());
        assert!(IntervalParams::new(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn control_examples() {
        let q = p(1.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(control(&q, 0.0).unwrap(), 6.0);
        assert_relative_eq!(control(&q, 1.0).unwrap(), -6.0);
        let r = p(0.1, 1.0, 1.0, 1.0);
        assert_eq!(control(&r, 0.5).unwrap(), 0.0);
        let sh = three_segment_shape(&r);
        assert_relative_eq!(sh.tau1, 0.15, epsilon = 1e-15);
        assert_relative_eq!(sh.tau2, 0.85, epsilon = 1e-15);
        let line = p(1.4, 0.7, 0.7, 2.0);
        for t in [0.0, 0.3, 1.9] {
            assert!(control(&line, t).unwrap().abs() < 1e-12);
        }
        assert!(control(&line, 2.5).is_err());
    }

    #[test]
    fn curve_examples() {
        let segs = build_curve(&p(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        assert_eq!((s.c0, s.c1, s.c2, s.c3), (0.0, 0.0, 3.0, -2.0));

        let segs = build_curve(&p(0.1, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(segs.len(), 3);
        assert_relative_eq!(segs[1].t_start, 0.15, epsilon = 1e-15);
        assert_relative_eq!(segs[1].t_end, 0.85, epsilon = 1e-15);
        assert_relative_eq!(segs[1].c0, 0.05, epsilon = 1e-15);
        assert!(segs[0].value(0.0).abs() < 1e-15);
        assert_relative_eq!(segs[2].value(1.0), 0.1, epsilon = 1e-15);
        assert_relative_eq!(segs[0].derivative(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(segs[2].derivative(1.0), 1.0, epsilon = 1e-14);

        let segs = build_curve(&p(1.5, 0.75, 0.75, 2.0)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_relative_eq!(segs[0].value(1.0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn three_segment_with_one_flat_end() {
        // vl = 0: the first cubic piece has zero width
        let q = p(0.05, 0.0, 1.0, 1.0);
        assert_eq!(classify(&q), Regime::ThreeSegment);
        let segs = build_curve(&q).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].value(0.0), 0.0);
        assert_relative_eq!(segs[1].value(1.0), 0.05, epsilon = 1e-15);
        assert_relative_eq!(cost(&q).unwrap(), 4.0 / (9.0 * 0.05), max_relative = 1e-14);
    }

    #[test]
    fn three_segment_derivatives_match_differences() {
        let (dx, vl, vr) = (0.2, 0.7, 1.3);
        let d = three_segment_derivatives(dx, vl, vr);
        let h = 1e-6;
        let f = |a: f64, b: f64, c: f64| three_segment_energy(a, b, c);
        let fd = [
            (f(dx + h, vl, vr) - f(dx - h, vl, vr)) / (2.0 * h),
            (f(dx, vl + h, vr) - f(dx, vl - h, vr)) / (2.0 * h),
            (f(dx, vl, vr + h) - f(dx, vl, vr - h)) / (2.0 * h),
        ];
        for (a, b) in d.grad.iter().zip(fd) {
            assert_relative_eq!(*a, b, max_relative = 1e-7);
        }
        let g = |a: f64, b: f64, c: f64| three_segment_derivatives(a, b, c).grad;
        let cols = [
            (g(dx + h, vl, vr), g(dx - h, vl, vr)),
            (g(dx, vl + h, vr), g(dx, vl - h, vr)),
            (g(dx, vl, vr + h), g(dx, vl, vr - h)),
        ];
        for (j, (gp, gm)) in cols.iter().enumerate() {
            for i in 0..3 {
                assert_relative_eq!(
                    d.hess[i][j],
                    (gp[i] - gm[i]) / (2.0 * h),
                    max_relative = 1e-6
                );
            }
        }
    }
}
