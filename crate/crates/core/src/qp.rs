//! Small dense primal active-set solver for the Newton subproblems
//!
//! ```text
//!     minimize    1/2 p' H p + g' p
//!     subject to  a_j' (z + p)  = b_j    (equalities)
//!                 a_j' (z + p) >= b_j    (inequalities)
//! ```
//!
//! with `H` symmetric positive definite and `z` feasible, so `p = 0` is a
//! feasible starting point.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConstraintKind {
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

impl LinearConstraint {
    pub fn ge(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self {
            terms,
            rhs,
            kind: ConstraintKind::Ge,
        }
    }

    pub fn eq(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self {
            terms,
            rhs,
            kind: ConstraintKind::Eq,
        }
    }

    pub fn dot(&self, p: &DVector<f64>) -> f64 {
        self.terms.iter().map(|&(i, c)| c * p[i]).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub step: DVector<f64>,
    /// Inequalities in the final working set, ascending.
    pub working: Vec<usize>,
    pub iterations: usize,
}

/// Solves the step problem starting from the working-set guess `hint`
/// (inequalities only; entries not tight at `z` are ignored).
pub(crate) fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    cons: &[LinearConstraint],
    z: &DVector<f64>,
    hint: &[usize],
) -> Option<QpSolution> {
    let n = g.len();
    // residual targets: a_j' p >= r_j
    let r: Vec<f64> = cons.iter().map(|c| c.rhs - c.dot(z)).collect();
    let scale = 1.0 + z.amax();
    let tight = |j: usize| r[j].abs() <= 1e-12 * scale;

    let mut working: Vec<usize> = cons
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == ConstraintKind::Eq)
        .map(|(j, _)| j)
        .collect();
    let mut hinted: Vec<usize> = hint
        .iter()
        .copied()
        .filter(|&j| j < cons.len() && cons[j].kind == ConstraintKind::Ge && tight(j))
        .collect();
    hinted.sort_unstable();
    hinted.dedup();
    working.extend(hinted);

    let mut p = DVector::zeros(n);
    let max_iter = 10 * (n + cons.len()) + 50;
    for iteration in 0..max_iter {
        let (target, mu) = match equality_qp(h, g, cons, &r, &working) {
            Some(sol) => sol,
            None => {
                // dependent working set: drop the newest inequality and retry
                let pos = working
                    .iter()
                    .rposition(|&j| cons[j].kind == ConstraintKind::Ge)?;
                working.remove(pos);
                continue;
            }
        };
        let d = &target - &p;
        if d.amax() <= 1e-13 * (1.0 + p.amax()) {
            // most negative multiplier among inequalities; lowest index on ties
            let mut drop: Option<(usize, f64)> = None;
            for (k, &j) in working.iter().enumerate() {
                if cons[j].kind == ConstraintKind::Ge && mu[k] < -1e-12 * (1.0 + g.amax()) {
                    let better = match drop {
                        None => true,
                        Some((kk, m)) => mu[k] < m || (mu[k] == m && j < working[kk]),
                    };
                    if better {
                        drop = Some((k, mu[k]));
                    }
                }
            }
            match drop {
                Some((k, _)) => {
                    working.remove(k);
                }
                None => {
                    let mut ineq: Vec<usize> = working
                        .into_iter()
                        .filter(|&j| cons[j].kind == ConstraintKind::Ge)
                        .collect();
                    ineq.sort_unstable();
                    return Some(QpSolution {
                        step: target,
                        working: ineq,
                        iterations: iteration + 1,
                    });
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (j, c) in cons.iter().enumerate() {
            if c.kind == ConstraintKind::Eq || working.contains(&j) {
                continue;
            }
            let ad = c.dot(&d);
            if ad < -1e-14 * (1.0 + d.amax()) {
                let slack = (c.dot(&p) - r[j]).max(0.0);
                let a = slack / -ad;
                if a < alpha {
                    alpha = a;
                    blocking = Some(j);
                }
            }
        }
        p += alpha * d;
        if let Some(j) = blocking {
            working.push(j);
        }
    }
    None
}

/// Minimizer over the working set as equalities, with multipliers ordered
/// like `working`. `None` if the KKT matrix is singular.
fn equality_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    cons: &[LinearConstraint],
    r: &[f64],
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let k = working.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + k);
    for i in 0..n {
        rhs[i] = -g[i];
    }
    for (row, &j) in working.iter().enumerate() {
        for &(i, c) in &cons[j].terms {
            kkt[(n + row, i)] = c;
            kkt[(i, n + row)] = -c;
        }
        rhs[n + row] = r[j];
    }
    let lu = kkt.lu();
    let sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}
