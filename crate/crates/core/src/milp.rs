//! Best-bound branch-and-bound over the simplex solver.
//!
//! Node LPs are warm-started from the parent's optimal basis; after a bound
//! change that basis stays dual feasible, so each node is typically a handful
//! of dual simplex pivots.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lp::{solve_lp_with, Basis, LinearProgram, LpOptions, LpResult, LpStatus};

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedIntegerLinearProgram {
    pub lp: LinearProgram,
    pub integer_vars: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// Node limit reached; incumbent (if any) and bound are reported.
    GapLimit,
    /// Every node was pruned against the cutoff; no solution below it exists.
    Cutoff,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct MilpResult {
    pub status: MilpStatus,
    /// Best solution found, integer components rounded. Empty if none.
    pub incumbent: Vec<f64>,
    pub objective: f64,
    /// Valid lower bound on the optimal value.
    pub best_bound: f64,
    pub nodes: usize,
    /// Global lower bound after each processed node.
    pub bound_history: Vec<f64>,
    /// Root Farkas certificate when the LP relaxation is infeasible.
    pub farkas: Option<Vec<f64>>,
}

impl MilpResult {
    pub fn has_incumbent(&self) -> bool {
        !self.incumbent.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct MilpOptions {
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Nodes whose relaxation value is at least this are discarded.
    pub cutoff: Option<f64>,
    pub lp: LpOptions,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            gap_tol: DEFAULT_GAP_TOL,
            node_limit: 1_000_000,
            cutoff: None,
            lp: LpOptions::default(),
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: Option<Arc<Basis>>,
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
    // BinaryHeap is a max-heap: smallest bound, then oldest node, wins.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub fn solve_milp(milp: &MixedIntegerLinearProgram, gap_tol: f64) -> MilpResult {
    solve_milp_with(
        milp,
        &MilpOptions {
            gap_tol,
            ..MilpOptions::default()
        },
    )
}

pub fn solve_milp_with(milp: &MixedIntegerLinearProgram, options: &MilpOptions) -> MilpResult {
    assert!(options.gap_tol >= 0.0, "gap tolerance must be nonnegative");
    let ints = &milp.integer_vars;
    let mut work = milp.lp.clone();
    let mut root_lower = Vec::with_capacity(ints.len());
    let mut root_upper = Vec::with_capacity(ints.len());
    for &j in ints {
        root_lower.push((work.lower[j] - INTEGRALITY_TOL).ceil());
        root_upper.push((work.upper[j] + INTEGRALITY_TOL).floor());
    }

    let mut result = MilpResult {
        status: MilpStatus::Infeasible,
        incumbent: Vec::new(),
        objective: f64::INFINITY,
        best_bound: f64::INFINITY,
        nodes: 0,
        bound_history: Vec::new(),
        farkas: None,
    };
    if root_lower.iter().zip(&root_upper).any(|(lo, hi)| lo > hi) {
        result.best_bound = f64::INFINITY;
        return result;
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        lower: root_lower,
        upper: root_upper,
        basis: None,
    });
    // Smallest relaxation bound among nodes discarded without branching.
    let mut pruned_min = f64::INFINITY;
    let mut last_bound = f64::NEG_INFINITY;

    while let Some(node) = heap.pop() {
        let threshold = prune_threshold(result.objective, options);
        if node.bound >= threshold {
            pruned_min = pruned_min.min(node.bound);
            continue;
        }
        if result.nodes >= options.node_limit {
            heap.push(node);
            result.status = MilpStatus::GapLimit;
            break;
        }
        result.nodes += 1;
        for (k, &j) in ints.iter().enumerate() {
            work.lower[j] = node.lower[k];
            work.upper[j] = node.upper[k];
        }
        let lp = solve_node(&work, node.basis.as_deref(), &options.lp);
        match lp.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                if result.nodes == 1 {
                    result.farkas = lp.farkas;
                }
                record_bound(&mut result, &heap, pruned_min, &mut last_bound);
                continue;
            }
            LpStatus::Unbounded => {
                result.status = MilpStatus::Unbounded;
                result.best_bound = f64::NEG_INFINITY;
                return result;
            }
            LpStatus::NumericalFailure => {
                log::warn!("node LP failed numerically after {} nodes", result.nodes);
                result.status = MilpStatus::NumericalFailure;
                result.best_bound = f64::NEG_INFINITY;
                return result;
            }
        }
        let value = lp.objective.max(node.bound);
        if value >= prune_threshold(result.objective, options) {
            pruned_min = pruned_min.min(value);
            record_bound(&mut result, &heap, pruned_min, &mut last_bound);
            continue;
        }
        match branching_var(&lp.primal, ints) {
            None => {
                let mut x = lp.primal;
                for &j in ints {
                    x[j] = x[j].round();
                }
                result.incumbent = x;
                result.objective = value;
                log::trace!("node {}: incumbent {value}", result.nodes);
            }
            Some((k, v)) => {
                let mut node = node;
                let threshold = prune_threshold(result.objective, options);
                if threshold.is_finite() {
                    fix_by_reduced_cost(&lp, threshold, ints, &mut node.lower, &mut node.upper);
                }
                let basis = lp.basis.map(Arc::new);
                let floor = v.floor();
                let mut down_upper = node.upper.clone();
                down_upper[k] = floor;
                let mut up_lower = node.lower.clone();
                up_lower[k] = floor + 1.0;
                seq += 1;
                heap.push(Node {
                    bound: value,
                    seq,
                    lower: node.lower,
                    upper: down_upper,
                    basis: basis.clone(),
                });
                seq += 1;
                heap.push(Node {
                    bound: value,
                    seq,
                    lower: up_lower,
                    upper: node.upper,
                    basis,
                });
            }
        }
        record_bound(&mut result, &heap, pruned_min, &mut last_bound);
    }

    let open_min = heap.peek().map_or(f64::INFINITY, |n| n.bound);
    result.best_bound = open_min.min(pruned_min).min(result.objective);
    if result.status != MilpStatus::GapLimit {
        result.status = if result.has_incumbent() {
            MilpStatus::Optimal
        } else if pruned_min.is_finite() {
            MilpStatus::Cutoff
        } else {
            MilpStatus::Infeasible
        };
    }
    if result.status == MilpStatus::Infeasible {
        result.best_bound = f64::INFINITY;
    }
    result
}

fn prune_threshold(incumbent: f64, options: &MilpOptions) -> f64 {
    let by_gap = if incumbent.is_finite() {
        incumbent - options.gap_tol
    } else {
        f64::INFINITY
    };
    by_gap.min(options.cutoff.unwrap_or(f64::INFINITY))
}

fn record_bound(result: &mut MilpResult, heap: &BinaryHeap<Node>, pruned_min: f64, last: &mut f64) {
    let open_min = heap.peek().map_or(f64::INFINITY, |n| n.bound);
    let bound = open_min.min(pruned_min).min(result.objective);
    // Children inherit their parent's value, so the bound cannot drop; the
    // max only absorbs the infinite value of an empty tree.
    *last = last.max(bound);
    result.bound_history.push(*last);
}

fn solve_node(lp: &LinearProgram, warm: Option<&Basis>, options: &LpOptions) -> LpResult {
    let res = solve_lp_with(lp, warm, options);
    if res.status == LpStatus::NumericalFailure && warm.is_some() {
        return solve_lp_with(lp, None, options);
    }
    res
}

/// Tightens integer bounds using `obj >= z + d_j (x_j - x*_j)` for every
/// point of the node: moving a variable off its bound by more than
/// `(threshold - z) / |d_j|` cannot beat the threshold.
fn fix_by_reduced_cost(lp: &LpResult, threshold: f64, ints: &[usize], lower: &mut [f64], upper: &mut [f64]) {
    let slack = threshold - lp.objective;
    if !(slack >= 0.0) {
        return;
    }
    let margin = 1e-7 * (1.0 + threshold.abs());
    for (k, &j) in ints.iter().enumerate() {
        let d = lp.dual_bounds[j];
        if d.abs() <= margin {
            continue;
        }
        let room = ((slack + margin) / d.abs()).floor();
        if d > 0.0 && (lp.primal[j] - lower[k]).abs() <= INTEGRALITY_TOL {
            upper[k] = upper[k].min(lower[k] + room);
        } else if d < 0.0 && (lp.primal[j] - upper[k]).abs() <= INTEGRALITY_TOL {
            lower[k] = lower[k].max(upper[k] - room);
        }
    }
}

/// Most fractional integer variable; ties go to the lowest index.
fn branching_var(x: &[f64], ints: &[usize]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut best_score = INTEGRALITY_TOL;
    for (k, &j) in ints.iter().enumerate() {
        let v = x[j];
        let frac = v - v.floor();
        let score = frac.min(1.0 - frac);
        if score > best_score {
            best_score = score;
            best = Some((k, v));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enumerate_binaries(milp: &MixedIntegerLinearProgram) -> Option<f64> {
        let ints = &milp.integer_vars;
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << ints.len()) {
            let mut lp = milp.lp.clone();
            for (k, &j) in ints.iter().enumerate() {
                let v = f64::from((mask >> k) & 1);
                lp.lower[j] = v;
                lp.upper[j] = v;
            }
            let res = crate::lp::solve_lp(&lp);
            if res.is_optimal() {
                best = Some(best.map_or(res.objective, |b: f64| b.min(res.objective)));
            }
        }
        best
    }

    #[test]
    fn rounds_up_to_next_integer() {
        let mut lp = LinearProgram::new(0);
        lp.add_var(1.0, 0.0, 3.0);
        lp.add_ge(vec![(0, 1.0)], 1.5);
        let res = solve_milp(&MixedIntegerLinearProgram { lp, integer_vars: vec![0] }, 1e-8);
        assert_eq!(res.status, MilpStatus::Optimal);
        assert_eq!(res.incumbent, vec![2.0]);
        assert!((res.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tie_resolved_deterministically() {
        let mut lp = LinearProgram::new(0);
        lp.add_var(-1.0, 0.0, 1.0);
        lp.add_var(-1.0, 0.0, 1.0);
        lp.add_le(vec![(0, 1.0), (1, 1.0)], 1.0);
        let milp = MixedIntegerLinearProgram { lp, integer_vars: vec![0, 1] };
        let res = solve_milp(&milp, 1e-8);
        assert!((res.objective + 1.0).abs() < 1e-12);
        assert_eq!(res.incumbent, vec![1.0, 0.0]);
        assert_eq!(solve_milp(&milp, 1e-8).incumbent, res.incumbent);
    }

    fn knapsack() -> MixedIntegerLinearProgram {
        let weights = [2.0, 3.0, 4.0, 5.0, 9.0];
        let values = [3.0, 4.0, 5.0, 8.0, 10.0];
        let mut lp = LinearProgram::new(0);
        for v in values {
            lp.add_var(-v, 0.0, 1.0);
        }
        lp.add_le(weights.iter().copied().enumerate().collect(), 10.0);
        MixedIntegerLinearProgram { lp, integer_vars: (0..5).collect() }
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let milp = knapsack();
        let res = solve_milp(&milp, 1e-8);
        let oracle = enumerate_binaries(&milp).unwrap();
        assert!((res.objective - oracle).abs() < 1e-9);
        // Items of weight 2, 3 and 5 give value 15.
        assert!((res.objective + 15.0).abs() < 1e-9);
    }

    #[test]
    fn bound_history_is_nondecreasing() {
        let res = solve_milp(&knapsack(), 1e-8);
        assert!(res.bound_history.windows(2).all(|w| w[0] <= w[1]));
        assert!(res.best_bound <= res.objective + 1e-8);
    }

    #[test]
    fn infeasible_root_carries_certificate() {
        let mut lp = LinearProgram::new(0);
        lp.add_var(0.0, 0.0, 1.0);
        lp.add_eq(vec![(0, 1.0)], 5.0);
        let res = solve_milp(&MixedIntegerLinearProgram { lp, integer_vars: vec![0] }, 1e-8);
        assert_eq!(res.status, MilpStatus::Infeasible);
        assert!(res.farkas.is_some());
    }

    #[test]
    fn integer_infeasible_without_lp_certificate() {
        let mut lp = LinearProgram::new(0);
        lp.add_var(0.0, 0.0, 1.0);
        lp.add_eq(vec![(0, 2.0)], 1.0);
        let res = solve_milp(&MixedIntegerLinearProgram { lp, integer_vars: vec![0] }, 1e-8);
        assert_eq!(res.status, MilpStatus::Infeasible);
        assert!(!res.has_incumbent());
    }

    #[test]
    fn node_limit_reports_gap() {
        let options = MilpOptions { node_limit: 1, ..MilpOptions::default() };
        // With capacity 11 the root relaxation is fractional.
        let mut milp = knapsack();
        milp.lp.inequalities[0].rhs = 11.0;
        let res = solve_milp_with(&milp, &options);
        assert_eq!(res.status, MilpStatus::GapLimit);
        assert!(res.best_bound <= -16.0);
    }

    #[test]
    fn cutoff_discards_everything_above() {
        let options = MilpOptions { cutoff: Some(-20.0), ..MilpOptions::default() };
        let res = solve_milp_with(&knapsack(), &options);
        assert_eq!(res.status, MilpStatus::Cutoff);
        assert!(res.best_bound >= -20.0 && res.best_bound <= -15.0);
    }

    pub(crate) fn random_binary_milp() -> impl Strategy<Value = MixedIntegerLinearProgram> {
        (1usize..=12, 0usize..3, 1usize..4).prop_flat_map(|(nb, nc, rows)| {
            let n = nb + nc;
            (
                prop::collection::vec(-10i32..10, n),
                prop::collection::vec(prop::collection::vec(-5i32..6, n), rows),
                prop::collection::vec(0i32..12, rows),
                Just(nb),
            )
                .prop_map(move |(c, a, b, nb)| {
                    let mut lp = LinearProgram::new(0);
                    for (j, cj) in c.iter().enumerate() {
                        let hi = if j < nb { 1.0 } else { 2.5 };
                        lp.add_var(f64::from(*cj), 0.0, hi);
                    }
                    for (row, rhs) in a.iter().zip(&b) {
                        let terms = row.iter().enumerate().map(|(j, v)| (j, f64::from(*v))).collect();
                        lp.add_le(terms, f64::from(*rhs));
                    }
                    MixedIntegerLinearProgram { lp, integer_vars: (0..nb).collect() }
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matches_exhaustive_enumeration(milp in random_binary_milp()) {
            let res = solve_milp(&milp, 0.0);
            match enumerate_binaries(&milp) {
                None => prop_assert_eq!(res.status, MilpStatus::Infeasible),
                Some(best) => {
                    prop_assert_eq!(res.status, MilpStatus::Optimal);
                    prop_assert!((res.objective - best).abs() <= 1e-9, "{} vs {}", res.objective, best);
                    prop_assert!(milp.lp.max_violation(&res.incumbent) <= 1e-6);
                    prop_assert!(res.bound_history.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }
}
