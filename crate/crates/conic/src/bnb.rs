//! Best-bound branch-and-bound over the binaries of a [`ConicProgram`].
//!
//! Internally every objective is minimized; a node's `bound` is a valid lower
//! bound (in that sense) on every integer point below it. Open nodes are
//! ordered by bound, then by depth (deeper first), then by creation id, so the
//! search is deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::time::Instant;

use crate::error::ProgramError;
use crate::program::{ConicProgram, ObjectiveSense};
use crate::settings::{relative_gap, BranchRule, SocpStatus, SolveReport, SolveSettings, SolveStatus};
use crate::socp::solve_with_bounds;

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap pops the greatest element: smallest bound, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

/// Bound changes `(var, lower, upper)` of one child.
type Child = Vec<(usize, f64, f64)>;

fn frac(v: f64) -> f64 {
    (v - v.round()).abs()
}

fn is_free(lower: &[f64], upper: &[f64], j: usize) -> bool {
    upper[j] > lower[j]
}

/// Choose a branching split at `x`, or `None` when all binaries are integral.
fn select_branch(
    program: &ConicProgram,
    binaries: &[usize],
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &SolveSettings,
) -> Option<[Child; 2]> {
    let tol = settings.tol_int;
    if settings.branch_rule == BranchRule::OneHotDichotomy {
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in program.one_hot.iter().enumerate() {
            let fractional = g.vars.iter().any(|v| is_free(lower, upper, v.0) && frac(x[v.0]) > tol);
            if !fractional {
                continue;
            }
            let conv = g.vars.iter().map(|v| x[v.0]).fold(f64::NEG_INFINITY, f64::max);
            if best.map_or(true, |(c, _)| conv < c) {
                best = Some((conv, gi));
            }
        }
        if let Some((_, gi)) = best {
            let free: Vec<usize> =
                program.one_hot[gi].vars.iter().map(|v| v.0).filter(|&j| is_free(lower, upper, j)).collect();
            let (pos, &pivot) = free
                .iter()
                .enumerate()
                .filter(|(_, &j)| frac(x[j]) > tol)
                .min_by(|a, b| frac(x[*a.1] - 0.5).total_cmp(&frac(x[*b.1] - 0.5)).then(a.1.cmp(b.1)))
                .expect("group has a fractional member");
            let mass = |s: &[usize]| s.iter().map(|&j| x[j].max(0.0)).sum::<f64>();
            let mut cut = pos + 1;
            if mass(&free[cut..]) <= tol {
                cut = pos;
            }
            if cut > 0 && cut < free.len() && mass(&free[..cut]) > tol && mass(&free[cut..]) > tol {
                let keep_left: Child = free[cut..].iter().map(|&j| (j, lower[j], lower[j])).collect();
                let keep_right: Child = free[..cut].iter().map(|&j| (j, lower[j], lower[j])).collect();
                return Some([keep_left, keep_right]);
            }
            return Some([vec![(pivot, lower[pivot], lower[pivot])], vec![(pivot, upper[pivot], upper[pivot])]]);
        }
    }
    let grouped: BTreeSet<usize> = if settings.branch_rule == BranchRule::OneHotDichotomy {
        program.one_hot.iter().flat_map(|g| g.vars.iter().map(|v| v.0)).collect()
    } else {
        BTreeSet::new()
    };
    let pick = binaries
        .iter()
        .copied()
        .filter(|&j| is_free(lower, upper, j) && frac(x[j]) > tol)
        .filter(|j| !grouped.contains(j) || settings.branch_rule == BranchRule::MostFractional)
        .min_by(|&a, &b| frac(x[a] - 0.5).total_cmp(&frac(x[b] - 0.5)).then(a.cmp(&b)));
    // Group members left fractional after the group pass can only occur under
    // `MostFractional`; single binaries are handled here.
    pick.map(|j| [vec![(j, lower[j], lower[j])], vec![(j, upper[j], upper[j])]])
}

/// Split on the first free binary; used when a node relaxation fails.
fn fallback_branch(binaries: &[usize], x: &[f64], lower: &[f64], upper: &[f64]) -> Option<[Child; 2]> {
    binaries
        .iter()
        .copied()
        .filter(|&j| is_free(lower, upper, j))
        .max_by(|&a, &b| {
            let fa = if x[a].is_finite() { frac(x[a]) } else { 0.0 };
            let fb = if x[b].is_finite() { frac(x[b]) } else { 0.0 };
            fa.total_cmp(&fb).then(b.cmp(&a))
        })
        .map(|j| [vec![(j, lower[j], lower[j])], vec![(j, upper[j], upper[j])]])
}

pub fn branch_and_bound(program: &ConicProgram, settings: &SolveSettings) -> Result<SolveReport, ProgramError> {
    program.validate()?;
    if !program.is_solvable() {
        return Err(ProgramError::Nonconvex);
    }
    let start = Instant::now();
    let sign = match program.objective.sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    let binaries: Vec<usize> = program.binaries().into_iter().map(|v| v.0).collect();
    let mut lower: Vec<f64> = program.variables.iter().map(|v| v.lower.unwrap_or(f64::NEG_INFINITY)).collect();
    let mut upper: Vec<f64> = program.variables.iter().map(|v| v.upper.unwrap_or(f64::INFINITY)).collect();
    for &j in &binaries {
        lower[j] = lower[j].max(0.0).ceil();
        upper[j] = upper[j].min(1.0).floor();
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { id: 0, depth: 0, bound: f64::NEG_INFINITY, lower, upper });
    let mut next_id = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut pruned_bound = f64::INFINITY;
    let mut nodes = 0;
    let mut solves = 0;
    let mut numerics = 0;
    let mut limit: Option<SolveStatus> = None;

    let fathomed = |bound: f64, inc: &Option<(f64, Vec<f64>)>| match inc {
        Some((v, _)) => bound >= *v || relative_gap(*v, bound) <= settings.tol_gap,
        None => false,
    };

    while let Some(node) = heap.pop() {
        if fathomed(node.bound, &incumbent) {
            pruned_bound = pruned_bound.min(node.bound);
            continue;
        }
        if nodes >= settings.node_limit {
            limit = Some(SolveStatus::NodeLimit);
            heap.push(node);
            break;
        }
        if start.elapsed().as_secs_f64() >= settings.time_limit_s {
            limit = Some(SolveStatus::TimeLimit);
            heap.push(node);
            break;
        }
        nodes += 1;
        let sol = solve_with_bounds(program, &node.lower, &node.upper, settings)?;
        solves += 1;
        let children = match sol.status {
            SocpStatus::PrimalInfeasible => continue,
            SocpStatus::DualInfeasible => {
                return Ok(SolveReport {
                    status: SolveStatus::Unbounded,
                    incumbent: None,
                    objective: None,
                    best_bound: None,
                    gap: None,
                    nodes,
                    socp_solves: solves,
                    numerical_failures: numerics,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            }
            SocpStatus::MaxIterations | SocpStatus::NumericalFailure => {
                numerics += 1;
                match fallback_branch(&binaries, &sol.x, &node.lower, &node.upper) {
                    Some(c) => (c, node.bound),
                    None => continue,
                }
            }
            SocpStatus::Optimal => {
                let value = sign * sol.objective;
                let bound = value.max(node.bound);
                if fathomed(bound, &incumbent) {
                    pruned_bound = pruned_bound.min(bound);
                    continue;
                }
                match select_branch(program, &binaries, &sol.x, &node.lower, &node.upper, settings) {
                    Some(c) => (c, bound),
                    None => {
                        let relax_x = sol.x.clone();
                        let all_fixed = binaries.iter().all(|&j| !is_free(&node.lower, &node.upper, j));
                        let polished = if all_fixed {
                            Some(sol)
                        } else {
                            let mut lo = node.lower.clone();
                            let mut up = node.upper.clone();
                            for &j in &binaries {
                                let r = sol.x[j].round().clamp(lo[j], up[j]);
                                lo[j] = r;
                                up[j] = r;
                            }
                            solves += 1;
                            let p = solve_with_bounds(program, &lo, &up, settings)?;
                            (p.status == SocpStatus::Optimal).then_some(p)
                        };
                        match polished {
                            Some(p) => {
                                let v = sign * p.objective;
                                if incumbent.as_ref().map_or(true, |(iv, _)| v < *iv) {
                                    let mut x = p.x;
                                    for &j in &binaries {
                                        x[j] = x[j].round();
                                    }
                                    incumbent = Some((v, x));
                                }
                                pruned_bound = pruned_bound.min(bound);
                                continue;
                            }
                            // Rounding within τ_int broke feasibility; keep splitting.
                            None => match fallback_branch(&binaries, &relax_x, &node.lower, &node.upper) {
                                Some(c) => (c, bound),
                                None => continue,
                            },
                        }
                    }
                }
            }
        };
        let (split, bound) = children;
        for child in split {
            let mut lo = node.lower.clone();
            let mut up = node.upper.clone();
            for (j, l, u) in child {
                lo[j] = l;
                up[j] = u;
            }
            heap.push(Node { id: next_id, depth: node.depth + 1, bound, lower: lo, upper: up });
            next_id += 1;
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let status = match (limit, &incumbent) {
        (Some(l), _) => l,
        (None, Some(_)) => SolveStatus::Optimal,
        (None, None) if numerics > 0 => SolveStatus::NumericalFailure,
        (None, None) => SolveStatus::Infeasible,
    };
    let (objective, best_bound, gap, x) = match incumbent {
        Some((v, x)) => {
            let b = v.min(pruned_bound).min(open_bound);
            (Some(sign * v), Some(sign * b), Some(relative_gap(v, b)), Some(x))
        }
        None => {
            let b = pruned_bound.min(open_bound);
            (None, b.is_finite().then_some(sign * b), None, None)
        }
    };
    Ok(SolveReport {
        status,
        incumbent: x,
        objective,
        best_bound,
        gap,
        nodes,
        socp_solves: solves,
        numerical_failures: numerics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
