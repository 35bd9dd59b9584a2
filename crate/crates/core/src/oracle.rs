//! Independent reference solver on a uniform grid.
//!
//! The curve is replaced by its values `x_0..x_{n-1}` on `n` equally spaced
//! nodes over the knot range, the bending energy by
//! `(h/2) Σ ((x_{k+1} - 2 x_k + x_{k-1}) / h²)²`, and the data sites are
//! snapped to their nearest node. Constraints are `x_{k+1} >= x_k`,
//! `x_{n-1} <= x_max` and the boundary condition. The resulting convex QP has
//! a pentadiagonal Hessian and bidiagonal constraints, so a primal-dual
//! interior-point method with a banded Cholesky factorization solves it in
//! `O(n)` per iteration.
//!
//! This path shares nothing with the knot-space solver beyond the problem
//! definition and is meant for verification on small instances.

use crate::error::{Error, Result};
use crate::problem::{Boundary, ProblemSpec};

const BAND: usize = 2;

/// Grid discretization of a [`ProblemSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridProblem {
    pub n: usize,
    pub h: f64,
    pub t_start: f64,
    /// Grid node of each data point.
    pub sites: Vec<usize>,
    pinned: bool,
    x_max: f64,
    lambda: f64,
    weights: Vec<f64>,
    targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub objective: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl GridProblem {
    pub fn new(spec: &ProblemSpec, n: usize) -> Result<Self> {
        if n < 100 {
            return Err(Error::InvalidGrid(format!("n = {n} < 100")));
        }
        let t_start = spec.t_start();
        let h = (spec.t_end() - t_start) / (n - 1) as f64;
        let mut sites = Vec::with_capacity(spec.data().len());
        for p in spec.data() {
            let k = ((p.t - t_start) / h).round() as usize;
            let k = k.min(n - 1);
            let off = (t_start + k as f64 * h - p.t).abs();
            if off > 0.5 * h * (1.0 + 1e-9) {
                return Err(Error::InvalidGrid(format!("site {} maps {off} away", p.t)));
            }
            sites.push(k);
        }
        Ok(Self {
            n,
            h,
            t_start,
            sites,
            pinned: spec.boundary() == Boundary::PinnedZero,
            x_max: spec.x_max(),
            lambda: spec.lambda(),
            weights: spec.data().iter().map(|p| p.weight).collect(),
            targets: spec.data().iter().map(|p| p.alpha).collect(),
        })
    }

    /// Largest distance between a data abscissa and its grid node.
    pub fn snapping_error(&self, spec: &ProblemSpec) -> f64 {
        spec.data()
            .iter()
            .zip(&self.sites)
            .map(|(p, &k)| (self.t_start + k as f64 * self.h - p.t).abs())
            .fold(0.0, f64::max)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.t_start + k as f64 * self.h)
            .collect()
    }

    /// Discrete objective of grid values `x` (length `n`).
    pub fn objective(&self, x: &[f64]) -> f64 {
        let energy = discrete_energy(x, self.h);
        let misfit: f64 = self
            .sites
            .iter()
            .zip(self.weights.iter().zip(&self.targets))
            .map(|(&k, (&w, &a))| w * (x[k] - a).powi(2))
            .sum();
        energy + 0.5 * self.lambda * misfit
    }

    fn first_var(&self) -> usize {
        usize::from(self.pinned)
    }

    fn n_vars(&self) -> usize {
        self.n - self.first_var()
    }
}

/// `(h/2) Σ ((x_{k+1} - 2 x_k + x_{k-1}) / h²)²`.
pub fn discrete_energy(x: &[f64], h: f64) -> f64 {
    let h3 = h * h * h;
    x.windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2))
        .sum::<f64>()
        / (2.0 * h3)
}

/// Grid size near `target` for which every knot lies exactly on a node, if
/// one exists within `[target, 2 target]`; otherwise `target`.
pub fn aligned_grid_size(spec: &ProblemSpec, target: usize) -> usize {
    let (a, b) = (spec.t_start(), spec.t_end());
    let fractions: Vec<f64> = spec.knots().iter().map(|&t| (t - a) / (b - a)).collect();
    for intervals in target.saturating_sub(1)..2 * target {
        let ok = fractions.iter().all(|f| {
            let x = f * intervals as f64;
            (x - x.round()).abs() <= 1e-9 * intervals as f64
        });
        if ok {
            return intervals + 1;
        }
    }
    target
}

/// Solves the grid problem to a relative KKT residual of `1e-9`.
pub fn oracle_solve(spec: &ProblemSpec, n: usize) -> Result<OracleSolution> {
    let grid = GridProblem::new(spec, n)?;
    Ipm::new(&grid).run(&grid)
}

/// Symmetric band matrix, lower part: `rows[i][d] = M[i][i - d]`.
#[derive(Clone)]
struct Band {
    rows: Vec<[f64; BAND + 1]>,
}

impl Band {
    fn zeros(n: usize) -> Self {
        Self {
            rows: vec![[0.0; BAND + 1]; n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.rows[i][i - j] += v;
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.rows.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] += self.rows[i][0] * x[i];
            for d in 1..=BAND.min(i) {
                let v = self.rows[i][d];
                y[i] += v * x[i - d];
                y[i - d] += v * x[i];
            }
        }
        y
    }

    /// `|M| |x|`, the magnitude scale of `M x` for backward-error tests.
    fn abs_mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.rows.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] += self.rows[i][0].abs() * x[i].abs();
            for d in 1..=BAND.min(i) {
                let v = self.rows[i][d].abs();
                y[i] += v * x[i - d].abs();
                y[i - d] += v * x[i].abs();
            }
        }
        y
    }

    /// In-place Cholesky; `None` if not positive definite.
    fn cholesky(mut self) -> Option<Self> {
        let n = self.rows.len();
        for i in 0..n {
            for d in (0..=BAND.min(i)).rev() {
                let j = i - d;
                let mut sum = self.rows[i][d];
                let lo = i.saturating_sub(BAND);
                for k in lo..j {
                    sum -= self.rows[i][i - k] * self.rows[j][j - k];
                }
                if d == 0 {
                    if !(sum > 0.0) {
                        return None;
                    }
                    self.rows[i][0] = sum.sqrt();
                } else {
                    self.rows[i][d] = sum / self.rows[j][0];
                }
            }
        }
        Some(self)
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.rows.len();
        for i in 0..n {
            let mut s = b[i];
            for d in 1..=BAND.min(i) {
                s -= self.rows[i][d] * b[i - d];
            }
            b[i] = s / self.rows[i][0];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for d in 1..=BAND.min(n - 1 - i) {
                s -= self.rows[i + d][d] * b[i + d];
            }
            b[i] = s / self.rows[i][0];
        }
    }
}

/// Constraint row `a' x >= b` with at most two terms.
#[derive(Clone, Copy)]
struct Row {
    terms: [(usize, f64); 2],
    len: usize,
    rhs: f64,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.terms[..self.len].iter().map(|&(i, c)| c * x[i]).sum()
    }
}

struct Ipm {
    q: Band,
    c: Vec<f64>,
    rows: Vec<Row>,
}

impl Ipm {
    fn new(g: &GridProblem) -> Self {
        let nv = g.n_vars();
        let first = g.first_var();
        let var = |k: usize| (k >= first).then(|| k - first);
        let mut q = Band::zeros(nv);
        let inv_h3 = 1.0 / (g.h * g.h * g.h);
        let stencil = [1.0, -2.0, 1.0];
        for r in 1..g.n - 1 {
            for (p, &ap) in stencil.iter().enumerate() {
                for (s, &as_) in stencil.iter().enumerate() {
                    if let (Some(i), Some(j)) = (var(r - 1 + p), var(r - 1 + s)) {
                        if i >= j {
                            q.add(i, j, ap * as_ * inv_h3);
                        }
                    }
                }
            }
        }
        let mut c = vec![0.0; nv];
        for ((&k, &w), &a) in g.sites.iter().zip(&g.weights).zip(&g.targets) {
            if let Some(i) = var(k) {
                q.add(i, i, g.lambda * w);
                c[i] -= g.lambda * w * a;
            }
        }
        let mut rows = Vec::with_capacity(g.n + 1);
        if !g.pinned {
            rows.push(Row {
                terms: [(0, 1.0), (0, 0.0)],
                len: 1,
                rhs: 0.0,
            });
        }
        for k in 0..g.n - 1 {
            match (var(k), var(k + 1)) {
                (Some(i), Some(j)) => rows.push(Row {
                    terms: [(j, 1.0), (i, -1.0)],
                    len: 2,
                    rhs: 0.0,
                }),
                (None, Some(j)) => rows.push(Row {
                    terms: [(j, 1.0), (j, 0.0)],
                    len: 1,
                    rhs: 0.0,
                }),
                _ => unreachable!(),
            }
        }
        rows.push(Row {
            terms: [(nv - 1, -1.0), (0, 0.0)],
            len: 1,
            rhs: -g.x_max,
        });
        Self { q, c, rows }
    }

    fn gt_mul(&self, y: &[f64], nv: usize) -> Vec<f64> {
        let mut out = vec![0.0; nv];
        for (row, &yr) in self.rows.iter().zip(y) {
            for &(i, c) in &row.terms[..row.len] {
                out[i] += c * yr;
            }
        }
        out
    }

    /// Normal-equation matrix `Q + G' diag(d) G`, factored.
    fn factor(&self, d: &[f64]) -> Option<Band> {
        let mut m = self.q.clone();
        for (row, &di) in self.rows.iter().zip(d) {
            let t = &row.terms[..row.len];
            for &(i, a) in t {
                for &(j, b) in t {
                    if i >= j {
                        m.add(i, j, a * b * di);
                    }
                }
            }
        }
        let diag_max = m.rows.iter().map(|r| r[0]).fold(0.0, f64::max);
        let mut shift = 0.0;
        for _ in 0..12 {
            let mut trial = m.clone();
            for r in trial.rows.iter_mut() {
                r[0] += shift;
            }
            if let Some(l) = trial.cholesky() {
                return Some(l);
            }
            shift = if shift == 0.0 {
                1e-15 * diag_max
            } else {
                shift * 10.0
            };
        }
        None
    }

    fn run(&self, g: &GridProblem) -> Result<OracleSolution> {
        let nv = g.n_vars();
        let nc = self.rows.len();
        // interior start: a gentle ramp below the bound
        let mut x: Vec<f64> = (0..nv)
            .map(|i| 0.5 * g.x_max * (i + 1) as f64 / (nv + 1) as f64)
            .collect();
        let mut s: Vec<f64> = self
            .rows
            .iter()
            .map(|r| (r.dot(&x) - r.rhs).max(1e-3))
            .collect();
        let mut z = vec![1.0; nc];
        let tol = 1e-9;
        let mut residual = f64::INFINITY;

        for iteration in 0..300 {
            let qx = self.q.mul(&x);
            let gtz = self.gt_mul(&z, nv);
            let r_d: Vec<f64> = (0..nv).map(|i| qx[i] + self.c[i] - gtz[i]).collect();
            let r_p: Vec<f64> = self
                .rows
                .iter()
                .zip(&s)
                .map(|(r, &si)| r.dot(&x) - si - r.rhs)
                .collect();
            let mu = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / nc as f64;

            // componentwise scale: Q x suffers cancellation of order eps |Q||x|
            let dual_scale = 1.0
                + inf_norm(&self.q.abs_mul(&x))
                    .max(inf_norm(&self.c))
                    .max(inf_norm(&gtz));
            let primal_scale = 1.0 + inf_norm(&x) + g.x_max;
            let fval = 0.5 * dot(&x, &qx) + dot(&self.c, &x);
            residual = (inf_norm(&r_d) / dual_scale)
                .max(inf_norm(&r_p) / primal_scale)
                .max(mu * nc as f64 / (1.0 + fval.abs()));
            log::trace!(
                "ipm {iteration}: rd {:e} rp {:e} gap {:e}",
                inf_norm(&r_d) / dual_scale,
                inf_norm(&r_p) / primal_scale,
                mu * nc as f64 / (1.0 + fval.abs())
            );
            if residual <= tol {
                let values = self.full_values(g, &x);
                return Ok(OracleSolution {
                    objective: g.objective(&values),
                    grid: g.grid(),
                    values,
                    iterations: iteration,
                    kkt_residual: residual,
                });
            }

            let d: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
            let chol = self.factor(&d).ok_or(Error::OracleNoConvergence {
                iterations: iteration,
                residual,
            })?;
            let newton = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                // (Q + G'DG) dx = -r_d - G' S^{-1} (r_c + Z r_p)
                let w: Vec<f64> = (0..nc).map(|j| (r_c[j] + z[j] * r_p[j]) / s[j]).collect();
                let gtw = self.gt_mul(&w, nv);
                let mut dx: Vec<f64> = (0..nv).map(|i| -r_d[i] - gtw[i]).collect();
                chol.solve(&mut dx);
                let ds: Vec<f64> = self
                    .rows
                    .iter()
                    .zip(&r_p)
                    .map(|(r, &rp)| r.dot(&dx) + rp)
                    .collect();
                let dz: Vec<f64> = (0..nc).map(|j| -(r_c[j] + z[j] * ds[j]) / s[j]).collect();
                (dx, ds, dz)
            };

            let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
            let (_, ds_a, dz_a) = newton(&rc_aff);
            let a_aff = step_to_boundary(&s, &ds_a, 1.0).min(step_to_boundary(&z, &dz_a, 1.0));
            let mu_aff = (0..nc)
                .map(|j| (s[j] + a_aff * ds_a[j]) * (z[j] + a_aff * dz_a[j]))
                .sum::<f64>()
                / nc as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let rc: Vec<f64> = (0..nc)
                .map(|j| s[j] * z[j] + ds_a[j] * dz_a[j] - sigma * mu)
                .collect();
            let (dx, ds, dz) = newton(&rc);
            let alpha = step_to_boundary(&s, &ds, 0.995).min(step_to_boundary(&z, &dz, 0.995));
            for i in 0..nv {
                x[i] += alpha * dx[i];
            }
            for j in 0..nc {
                s[j] += alpha * ds[j];
                z[j] += alpha * dz[j];
            }
        }
        Err(Error::OracleNoConvergence {
            iterations: 300,
            residual,
        })
    }

    /// Grid values with the boundary pin restored and the constraints
    /// enforced exactly.
    fn full_values(&self, g: &GridProblem, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(g.n);
        if g.pinned {
            v.push(0.0);
        }
        v.extend_from_slice(x);
        v[0] = v[0].max(0.0);
        for k in 1..v.len() {
            if v[k] < v[k - 1] {
                v[k] = v[k - 1];
            }
        }
        let last = v.len() - 1;
        if v[last] > g.x_max {
            v[last] = g.x_max;
            for k in (0..last).rev() {
                v[k] = v[k].min(v[k + 1]);
            }
        }
        v
    }
}

fn step_to_boundary(v: &[f64], dv: &[f64], fraction: f64) -> f64 {
    let mut a: f64 = 1.0;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            a = a.min(-fraction * vi / di);
        }
    }
    a
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
