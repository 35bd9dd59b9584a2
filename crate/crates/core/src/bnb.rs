//! Branch and bound over interval regimes.
//!
//! Every node fixes a set `S` of *forced* intervals. Forced intervals carry
//! their exact monotone energy; the others carry the Hermite-cubic energy with
//! no monotonicity requirement. The Hermite energy never exceeds the exact one,
//! so each node's optimum is a lower bound on the full problem, and adding an
//! interval to `S` can only raise it. A node whose non-forced intervals all
//! pass the monotone certificate is exact: its relaxed optimum equals the true
//! objective at the same point. Otherwise it branches once per failing
//! interval, forcing that interval in the child.
//!
//! Any node solution is feasible for the original problem, so the exact
//! objective evaluated at it is an upper bound; the best of these is the
//! incumbent.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{self, IntervalParams, Regime};
use crate::objective::{self, IntervalMode, RegimeAssignment};
use crate::problem::{KnotVector, ProblemSpec};
use crate::spline::SplineCurve;
use crate::subproblem::{self, SolverOptions, SubproblemResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOrder {
    /// Level by level; all nodes of a level are solved together (in parallel
    /// with the `parallel` feature).
    BreadthFirst,
    /// Most violated interval first, one node at a time.
    DepthFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub max_nodes: usize,
    /// Gap tolerance, relative to `1 + |incumbent|`.
    pub tol_gap: f64,
    /// Worker threads for node solves; `None` uses the global pool, `Some(1)`
    /// runs serially.
    pub threads: Option<usize>,
    pub node_order: NodeOrder,
    /// Disables pruning and gap-based early termination when false.
    pub prune: bool,
    pub solver: SolverOptions,
    /// Starting point for the root solve.
    pub warm_start: Option<KnotVector>,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            max_nodes: 100_000,
            tol_gap: 1e-6,
            threads: None,
            node_order: NodeOrder::BreadthFirst,
            prune: true,
            solver: SolverOptions::default(),
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    OptimalAtRoot,
    Optimal,
    IterationLimit,
}

/// One solved node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Forced interval indices, ascending.
    pub forced: Vec<usize>,
    pub lower_bound: f64,
    /// Exact objective at the node's solution.
    pub upper_bound: f64,
    pub certified: bool,
    pub result: SubproblemResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub incumbent: KnotVector,
    pub objective: f64,
    /// Best proven lower bound.
    pub lower_bound: f64,
    pub nodes_explored: usize,
    pub nodes_pruned: usize,
    pub tree_depth: usize,
    pub status: SolveStatus,
    /// Regime of each interval in the returned curve.
    pub regimes: Vec<Regime>,
    #[serde(skip)]
    pub nodes: Vec<BnbNode>,
}

struct Pending {
    forced: Vec<bool>,
    parent: Option<usize>,
    depth: usize,
    parent_bound: f64,
    warm: Option<KnotVector>,
}

fn assignment(forced: &[bool]) -> RegimeAssignment {
    RegimeAssignment(
        forced
            .iter()
            .map(|&f| {
                if f {
                    IntervalMode::Unrestricted
                } else {
                    IntervalMode::Cubic
                }
            })
            .collect(),
    )
}

fn certificate_tolerance(kv: &KnotVector, i: usize) -> f64 {
    let dt = kv.knots[i + 1] - kv.knots[i];
    1e-10
        * (1.0
            + kv.values[i].abs()
            + kv.values[i + 1].abs()
            + dt * (kv.slopes[i] + kv.slopes[i + 1]))
}

/// Non-forced intervals failing the certificate, most violated first.
fn violations(kv: &KnotVector, forced: &[bool]) -> Vec<usize> {
    let shortfalls = objective::certificate_shortfalls(kv);
    let mut out: Vec<(usize, f64)> = shortfalls
        .iter()
        .enumerate()
        .filter(|&(i, &s)| !forced[i] && s > certificate_tolerance(kv, i))
        .map(|(i, &s)| (i, s))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(i, _)| i).collect()
}

fn solve_batch(spec: &ProblemSpec, batch: &[Pending], config: &BnbConfig) -> Vec<SubproblemResult> {
    let run = |p: &Pending| {
        subproblem::solve_node_with(
            spec,
            &assignment(&p.forced),
            p.warm.as_ref(),
            &config.solver,
        )
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if batch.len() > 1 && config.threads != Some(1) {
            let go = || batch.par_iter().map(run).collect::<Vec<_>>();
            return match config.threads {
                Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => pool.install(go),
                    Err(_) => go(),
                },
                None => go(),
            };
        }
    }
    batch.iter().map(run).collect()
}

/// Runs the search and assembles the optimal curve.
pub fn solve(spec: &ProblemSpec, config: &BnbConfig) -> Result<(SolveReport, SplineCurve)> {
    let m = spec.n_intervals();
    let exact = RegimeAssignment::unrestricted(spec);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let root = vec![false; m];
    seen.insert(root.clone());
    let mut queue = std::collections::VecDeque::from([Pending {
        forced: root,
        parent: None,
        depth: 0,
        parent_bound: f64::NEG_INFINITY,
        warm: config.warm_start.clone(),
    }]);

    // at most 2^(m+1) subproblems
    let node_cap = 1usize.checked_shl(m as u32 + 1).unwrap_or(usize::MAX);
    let mut nodes: Vec<BnbNode> = Vec::new();
    let mut incumbent: Option<(KnotVector, f64)> = None;
    let mut best_bound = f64::NEG_INFINITY;
    let mut pruned = 0usize;
    let mut closed = false;
    let mut hit_limit = false;
    // unconverged nodes with nothing left to branch on
    let mut unresolved = 0usize;

    let gap_closed = |inc: &Option<(KnotVector, f64)>, lb: f64| -> bool {
        inc.as_ref()
            .is_some_and(|(_, f)| f - lb <= config.tol_gap * (1.0 + f.abs()))
    };

    while !queue.is_empty() {
        let mut batch: Vec<Pending> = match config.node_order {
            NodeOrder::BreadthFirst => queue.drain(..).collect(),
            NodeOrder::DepthFirst => queue.pop_back().into_iter().collect(),
        };
        if config.prune {
            if let Some((_, inc)) = &incumbent {
                let before = batch.len();
                let cut = inc - config.tol_gap * (1.0 + inc.abs());
                batch.retain(|p| p.parent_bound < cut);
                pruned += before - batch.len();
            }
        }
        let room = config.max_nodes.min(node_cap).saturating_sub(nodes.len());
        if batch.len() > room {
            batch.truncate(room);
            hit_limit = true;
        }
        if batch.is_empty() {
            if hit_limit {
                break;
            }
            continue;
        }

        let results = solve_batch(spec, &batch, config);
        let mut children: Vec<Pending> = Vec::new();
        for (pending, result) in batch.into_iter().zip(results) {
            let id = nodes.len();
            let lower_bound = if result.converged {
                result.objective.max(pending.parent_bound)
            } else {
                pending.parent_bound
            };
            best_bound = best_bound.max(lower_bound);
            let candidate = tidy(&result.kv);
            let upper_bound =
                objective::total_objective(spec, &candidate, &exact).unwrap_or(f64::INFINITY);
            if upper_bound.is_finite() && incumbent.as_ref().is_none_or(|(_, f)| upper_bound < *f) {
                incumbent = Some((candidate, upper_bound));
            }
            let failing = violations(&result.kv, &pending.forced);
            let certified = failing.is_empty() && result.converged;
            if !certified {
                let mut kids: Vec<Pending> = failing
                    .iter()
                    .filter_map(|&i| {
                        let mut f = pending.forced.clone();
                        f[i] = true;
                        seen.insert(f.clone()).then(|| Pending {
                            forced: f,
                            parent: Some(id),
                            depth: pending.depth + 1,
                            parent_bound: lower_bound,
                            warm: Some(result.kv.clone()),
                        })
                    })
                    .collect();
                if !result.converged && failing.is_empty() {
                    log::warn!(
                        "node {id} did not converge (residual {:e})",
                        result.kkt_residual
                    );
                    unresolved += 1;
                }
                if config.node_order == NodeOrder::DepthFirst {
                    kids.reverse();
                }
                children.extend(kids);
            }
            log::debug!(
                "node {id} depth {} forced {:?} lb {lower_bound:.12e} ub {upper_bound:.12e} certified {certified}",
                pending.depth,
                forced_indices(&pending.forced)
            );
            nodes.push(BnbNode {
                id,
                parent: pending.parent,
                depth: pending.depth,
                forced: forced_indices(&pending.forced),
                lower_bound,
                upper_bound,
                certified,
                result,
            });
        }
        queue.extend(children);
        if config.prune && gap_closed(&incumbent, best_bound) {
            closed = true;
            pruned += queue.len();
            queue.clear();
        }
        if hit_limit {
            break;
        }
    }

    let (kv, value) = match incumbent {
        Some(inc) => inc,
        None => {
            // no node produced a finite exact objective; solve the exact problem directly
            let r = subproblem::solve_exact(spec, None);
            (r.kv, r.objective)
        }
    };
    let status = if (hit_limit || unresolved > 0) && !closed {
        SolveStatus::IterationLimit
    } else if nodes.len() == 1 {
        SolveStatus::OptimalAtRoot
    } else {
        SolveStatus::Optimal
    };
    let curve = assemble(spec, &kv)?;
    let regimes = (0..kv.n_intervals())
        .map(|i| interval_params(&kv, i).map(|p| kernel::classify(&p)))
        .collect::<Result<Vec<_>>>()?;
    let report = SolveReport {
        incumbent: kv,
        objective: value,
        lower_bound: best_bound.min(value),
        nodes_explored: nodes.len(),
        nodes_pruned: pruned,
        tree_depth: nodes.iter().map(|n| n.depth).max().unwrap_or(0),
        status,
        regimes,
        nodes,
    };
    Ok((report, curve))
}

/// Clears rounding-level slopes next to intervals without rise, where any
/// positive slope makes the exact energy infinite.
fn tidy(kv: &KnotVector) -> KnotVector {
    let mut kv = kv.clone();
    let tiny = 1e-12 * (1.0 + kv.slopes.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for i in 0..kv.n_intervals() {
        if kv.values[i + 1] - kv.values[i] <= 0.0 {
            for k in [i, i + 1] {
                if kv.slopes[k] <= tiny {
                    kv.slopes[k] = 0.0;
                }
            }
        }
    }
    kv
}

fn forced_indices(forced: &[bool]) -> Vec<usize> {
    forced
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| i)
        .collect()
}

fn interval_params(kv: &KnotVector, i: usize) -> Result<IntervalParams> {
    IntervalParams::new(
        kv.values[i + 1] - kv.values[i],
        kv.slopes[i],
        kv.slopes[i + 1],
        kv.knots[i + 1] - kv.knots[i],
    )
}

/// Joins the optimal per-interval curves through `kv` into one spline.
pub fn assemble(spec: &ProblemSpec, kv: &KnotVector) -> Result<SplineCurve> {
    let report = objective::feasible(spec, kv);
    if !report.feasible {
        let msg = report
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(crate::Error::Shape(format!(
            "infeasible knot vector: {msg}"
        )));
    }
    let mut segments = Vec::with_capacity(3 * kv.n_intervals());
    for i in 0..kv.n_intervals() {
        let p = interval_params(kv, i)?;
        for seg in kernel::build_curve(&p)? {
            let mut seg = seg.translated(kv.knots[i], kv.values[i]);
            // keep breakpoints exactly on the knots
            if seg.t_end > kv.knots[i + 1]
                || (kv.knots[i + 1] - seg.t_end).abs() <= 1e-14 * (1.0 + kv.knots[i + 1].abs())
            {
                seg.t_end = kv.knots[i + 1];
            }
            if let Some(prev) = segments.last() {
                let prev: &kernel::CubicSegment = prev;
                seg.t_start = prev.t_end;
            }
            if seg.t_end > seg.t_start {
                segments.push(seg);
            }
        }
    }
    SplineCurve::from_segments(&segments)
}
