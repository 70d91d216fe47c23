use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::time::Instant;

use super::simplex::{solve_cold, solve_warm, LpRun, Tableau};
use super::{
    MilpError, MilpProblem, Sense, SolveLimits, SolveResult, SolveStatus, INTEGRALITY_TOL,
};

/// An open node: the LP at this node is already solved and its value is `bound`
/// (in the maximization frame).
struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    /// Bound tightenings relative to the root, as `(var, lower, upper)`.
    changes: Vec<(usize, f64, f64)>,
    x: Vec<f64>,
}

/// Memory cap on tableaus held by open nodes.
const TABLEAU_BUDGET: usize = 1 << 30;

#[derive(Clone, Copy)]
struct Rank(f64, usize);

impl PartialEq for Rank {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Rank {}
impl PartialOrd for Rank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Rank {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Final tableaus of open nodes, for warm-starting their children. Over budget,
/// the entries with the worst bound are evicted first.
#[derive(Default)]
struct TableauStore {
    tabs: HashMap<usize, (Rank, Tableau)>,
    ranked: BTreeSet<Rank>,
    held: usize,
}

impl TableauStore {
    fn insert(&mut self, id: usize, bound: f64, tab: Tableau) {
        let size = tab.footprint();
        let rank = Rank(bound, id);
        while self.held + size > TABLEAU_BUDGET {
            match self.ranked.first() {
                Some(&worst) if worst < rank => {
                    self.take(worst.1);
                }
                _ => return,
            }
        }
        self.held += size;
        self.ranked.insert(rank);
        self.tabs.insert(id, (rank, tab));
    }

    fn take(&mut self, id: usize) -> Option<Tableau> {
        let (rank, tab) = self.tabs.remove(&id)?;
        self.ranked.remove(&rank);
        self.held -= tab.footprint();
        Some(tab)
    }
}

/// Ordering used while no incumbent exists: dive (deepest first).
struct Dive(Node);
/// Best-bound ordering; ties go to the deeper node, then the older one.
struct BestBound(Node);

impl PartialEq for BestBound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for BestBound {}
impl PartialOrd for BestBound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for BestBound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .bound
            .total_cmp(&other.0.bound)
            .then(self.0.depth.cmp(&other.0.depth))
            .then(other.0.id.cmp(&self.0.id))
    }
}

impl PartialEq for Dive {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Dive {}
impl PartialOrd for Dive {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Dive {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .depth
            .cmp(&other.0.depth)
            .then(self.0.bound.total_cmp(&other.0.bound))
            .then(other.0.id.cmp(&self.0.id))
    }
}

enum Frontier {
    Dive(BinaryHeap<Dive>),
    Best(BinaryHeap<BestBound>),
}

impl Frontier {
    fn push(&mut self, n: Node) {
        match self {
            Frontier::Dive(h) => h.push(Dive(n)),
            Frontier::Best(h) => h.push(BestBound(n)),
        }
    }

    fn pop(&mut self) -> Option<Node> {
        match self {
            Frontier::Dive(h) => h.pop().map(|d| d.0),
            Frontier::Best(h) => h.pop().map(|b| b.0),
        }
    }

    fn max_bound(&self) -> f64 {
        match self {
            Frontier::Dive(h) => h.iter().map(|d| d.0.bound).fold(f64::NEG_INFINITY, f64::max),
            Frontier::Best(h) => h.peek().map_or(f64::NEG_INFINITY, |b| b.0.bound),
        }
    }

    fn into_best(self) -> Self {
        match self {
            Frontier::Dive(h) => Frontier::Best(h.into_iter().map(|d| BestBound(d.0)).collect()),
            best => best,
        }
    }
}

/// Solves `problem` to optimality (within `limits.gap`) by branch-and-bound.
///
/// Branches on the most fractional integer variable (lowest index on ties) and
/// explores nodes best-bound first once an incumbent exists; until then it dives
/// depth-first to find one. On a time or node limit the best incumbent and a
/// valid bound are returned.
pub fn solve_milp(problem: &MilpProblem, limits: &SolveLimits) -> Result<SolveResult, MilpError> {
    problem.validate()?;
    let start = Instant::now();
    let deadline = limits.time.map(|t| start + t);
    // Internally everything is compared in the maximization frame.
    let flip = match problem.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let finish = |status, incumbent: Option<(Vec<f64>, f64)>, bound: f64, nodes| {
        let (inc, val) = match incumbent {
            Some((x, v)) => (Some(x), v * flip),
            None => (None, f64::NAN),
        };
        SolveResult {
            status,
            incumbent: inc,
            incumbent_value: val,
            best_bound: bound * flip,
            node_count: nodes,
            wall_time: start.elapsed(),
        }
    };

    let node_bounds = |changes: &[(usize, f64, f64)]| {
        let mut lo = problem.lower.clone();
        let mut hi = problem.upper.clone();
        for &(j, l, u) in changes {
            lo[j] = l;
            hi[j] = u;
        }
        (lo, hi)
    };
    let rule = limits.pivot_rule;
    // Warm solve from `parent` when possible, cold otherwise.
    let solve_child = |parent: Option<Tableau>, changes: &[(usize, f64, f64)]| {
        let (lo, hi) = node_bounds(changes);
        if let Some(tab) = parent {
            let last = *changes.last().expect("child has a branching change");
            if let Some(run) = solve_warm(tab, problem, last, &lo, &hi, rule, deadline)? {
                return Ok(run);
            }
        }
        solve_cold(problem, &lo, &hi, rule, deadline)
    };
    let mut store = TableauStore::default();

    let mut nodes = 1;
    let root = match solve_cold(problem, &problem.lower, &problem.upper, rule, deadline)? {
        LpRun::Timeout => return Ok(finish(SolveStatus::TimeLimit, None, f64::INFINITY, nodes)),
        LpRun::Infeasible => {
            return Ok(finish(SolveStatus::Infeasible, None, f64::NEG_INFINITY, nodes))
        }
        LpRun::Optimal { x, value, tab } => {
            store.insert(0, value * flip, tab);
            Node { bound: value * flip, depth: 0, id: 0, changes: Vec::new(), x }
        }
    };

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut frontier = Frontier::Dive(BinaryHeap::new());
    frontier.push(root);
    let mut next_id = 1;
    // Largest bound among subtrees discarded within the gap; keeps the reported
    // bound valid rather than merely within `gap` of valid.
    let mut pruned = f64::NEG_INFINITY;

    while let Some(node) = frontier.pop() {
        let parent = store.take(node.id);
        let best = incumbent.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
        if node.bound <= best + limits.gap {
            pruned = pruned.max(node.bound);
            if matches!(frontier, Frontier::Best(_)) {
                // Best-bound order: every remaining node is dominated too.
                let bound = best.max(pruned);
                return Ok(finish(SolveStatus::Optimal, incumbent, bound, nodes));
            }
            continue;
        }

        let Some(j) = most_fractional(problem, &node.x) else {
            let x = round_integers(problem, &node.x);
            let value = problem.objective_value(&x) * flip;
            if value > best {
                incumbent = Some((x, value));
                frontier = frontier.into_best();
            }
            continue;
        };

        let out_of_time = deadline.is_some_and(|d| Instant::now() >= d);
        let out_of_nodes = limits.nodes.is_some_and(|n| nodes >= n);
        if out_of_time || out_of_nodes {
            let bound = node.bound.max(frontier.max_bound()).max(best).max(pruned);
            let status = if out_of_time { SolveStatus::TimeLimit } else { SolveStatus::NodeLimit };
            return Ok(finish(status, incumbent, bound, nodes));
        }

        let v = node.x[j];
        let (lo, hi) = current_bounds(problem, &node.changes, j);
        let branches: Vec<(f64, f64)> =
            [(lo, v.floor()), (v.ceil(), hi)].into_iter().filter(|(l, u)| l <= u).collect();
        let mut parent = match parent {
            Some(tab) => Some(tab),
            None => {
                let (lo, hi) = node_bounds(&node.changes);
                match solve_cold(problem, &lo, &hi, rule, deadline)? {
                    LpRun::Optimal { tab, .. } => Some(tab),
                    LpRun::Infeasible => None,
                    LpRun::Timeout => {
                        let bound = node.bound.max(frontier.max_bound()).max(best).max(pruned);
                        return Ok(finish(SolveStatus::TimeLimit, incumbent, bound, nodes));
                    }
                }
            }
        };
        for (i, &(l, u)) in branches.iter().enumerate() {
            let mut changes = node.changes.clone();
            changes.push((j, l, u));
            nodes += 1;
            let start_from = if i + 1 == branches.len() { parent.take() } else { parent.clone() };
            match solve_child(start_from, &changes)? {
                LpRun::Timeout => {
                    let bound = node.bound.max(frontier.max_bound()).max(best).max(pruned);
                    return Ok(finish(SolveStatus::TimeLimit, incumbent, bound, nodes));
                }
                LpRun::Infeasible => {}
                LpRun::Optimal { x, value, tab } => {
                    let bound = (value * flip).min(node.bound);
                    let best = incumbent.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
                    if bound <= best + limits.gap {
                        pruned = pruned.max(bound);
                    } else {
                        store.insert(next_id, bound, tab);
                        frontier.push(Node {
                            bound,
                            depth: node.depth + 1,
                            id: next_id,
                            changes,
                            x,
                        });
                        next_id += 1;
                    }
                }
            }
        }
    }

    match incumbent {
        Some((_, v)) => Ok(finish(SolveStatus::Optimal, incumbent, v.max(pruned), nodes)),
        None => Ok(finish(SolveStatus::Infeasible, None, f64::NEG_INFINITY, nodes)),
    }
}

fn current_bounds(problem: &MilpProblem, changes: &[(usize, f64, f64)], j: usize) -> (f64, f64) {
    changes
        .iter()
        .rev()
        .find(|c| c.0 == j)
        .map_or((problem.lower[j], problem.upper[j]), |&(_, l, u)| (l, u))
}

/// Most fractional integer variable, preferring binaries (by root bounds).
fn most_fractional(problem: &MilpProblem, x: &[f64]) -> Option<usize> {
    let mut pick = None;
    let mut best = (false, INTEGRALITY_TOL);
    for (j, &v) in x.iter().enumerate() {
        if !problem.integer[j] {
            continue;
        }
        let frac = (v - v.round()).abs();
        if frac <= INTEGRALITY_TOL {
            continue;
        }
        let key = (problem.upper[j] - problem.lower[j] <= 1.0, frac);
        if key.0 > best.0 || (key.0 == best.0 && key.1 > best.1) {
            best = key;
            pick = Some(j);
        }
    }
    pick
}

fn round_integers(problem: &MilpProblem, x: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(&problem.integer)
        .map(|(&v, &int)| if int { v.round() } else { v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve_lp, LpOutcome, PivotRule, Relation};

    fn knapsack() -> MilpProblem {
        let mut p = MilpProblem::new(Sense::Maximize);
        let items = [(6.0, 1.0), (10.0, 2.0), (12.0, 3.0)];
        let vars: Vec<_> = items.iter().map(|&(v, _)| p.add_var(v, 0.0, 1.0, true)).collect();
        p.add_constraint(
            vars.iter().zip(&items).map(|(&j, &(_, w))| (j, w)).collect(),
            Relation::Le,
            5.0,
            "capacity",
        );
        p
    }

    #[test]
    fn knapsack_matches_subset_enumeration() {
        let items = [(6.0, 1.0), (10.0, 2.0), (12.0, 3.0)];
        let brute = (0..8u32)
            .filter_map(|mask| {
                let (v, w) = (0..3)
                    .filter(|i| mask >> i & 1 == 1)
                    .fold((0.0, 0.0), |(v, w), i| (v + items[i].0, w + items[i].1));
                (w <= 5.0).then_some(v)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(brute, 22.0);

        let r = solve_milp(&knapsack(), &SolveLimits::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.incumbent_value - brute).abs() < 1e-9);
        assert!(r.best_bound >= r.incumbent_value - 1e-9);
    }

    #[test]
    fn integral_relaxation_needs_no_branching() {
        let mut p = MilpProblem::new(Sense::Maximize);
        let x = p.add_var(3.0, 0.0, 10.0, true);
        let y = p.add_var(2.0, 0.0, 10.0, true);
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Le, 4.0, "");
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 2.0, "");
        let lp = match solve_lp(&p, PivotRule::Bland).unwrap() {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Infeasible => unreachable!(),
        };
        let r = solve_milp(&p, &SolveLimits::default()).unwrap();
        assert_eq!(r.node_count, 1);
        assert!((r.incumbent_value - lp).abs() < 1e-9);
    }

    #[test]
    fn infeasible_integer_program() {
        // 2x = 1 has no integer solution.
        let mut p = MilpProblem::new(Sense::Minimize);
        let x = p.add_var(1.0, 0.0, 3.0, true);
        p.add_constraint(vec![(x, 2.0)], Relation::Eq, 1.0, "");
        let r = solve_milp(&p, &SolveLimits::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn minimization_reports_lower_bound() {
        let mut p = MilpProblem::new(Sense::Minimize);
        let x = p.add_var(1.0, 0.0, 5.0, true);
        let y = p.add_var(1.0, 0.0, 5.0, true);
        p.add_constraint(vec![(x, 2.0), (y, 2.0)], Relation::Ge, 3.0, "");
        let r = solve_milp(&p, &SolveLimits::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.incumbent_value - 2.0).abs() < 1e-9);
        assert!(r.best_bound <= r.incumbent_value + 1e-9);
    }

    #[test]
    fn node_limit_keeps_a_valid_bound() {
        let mut p = MilpProblem::new(Sense::Maximize);
        let vars: Vec<_> = (0..12).map(|i| p.add_var(1.0 + i as f64 * 0.37, 0.0, 1.0, true)).collect();
        p.add_constraint(
            vars.iter().enumerate().map(|(i, &j)| (j, 1.3 + (i % 5) as f64 * 0.71)).collect(),
            Relation::Le,
            7.9,
            "",
        );
        let exact = solve_milp(&p, &SolveLimits::default()).unwrap();
        let limited = solve_milp(&p, &SolveLimits { nodes: Some(3), ..Default::default() }).unwrap();
        assert_eq!(limited.status, SolveStatus::NodeLimit);
        assert!(limited.best_bound >= exact.incumbent_value - 1e-9);
        if limited.incumbent.is_some() {
            assert!(limited.incumbent_value <= exact.incumbent_value + 1e-9);
        }
    }

    fn brute_force(p: &MilpProblem) -> Option<f64> {
        let n = p.n_vars();
        let mut x: Vec<f64> = p.lower.clone();
        let mut best: Option<f64> = None;
        loop {
            if p.constraints.iter().all(|r| r.violation(&x) <= 1e-9) {
                let v = p.objective_value(&x);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
            let mut k = 0;
            while k < n && x[k] >= p.upper[k] {
                x[k] = p.lower[k];
                k += 1;
            }
            if k == n {
                return best;
            }
            x[k] += 1.0;
        }
    }

    proptest::proptest! {
        #[test]
        fn matches_enumeration(
            obj in proptest::collection::vec(-50i32..60, 6),
            ub in proptest::collection::vec(1i32..5, 6),
            rows in proptest::collection::vec(
                (proptest::collection::vec(-4i32..5, 6), 0u8..3, -3i32..14), 1..6),
        ) {
            let mut p = MilpProblem::new(Sense::Maximize);
            for j in 0..6 {
                p.add_var(obj[j] as f64 * 0.13, 0.0, ub[j] as f64, true);
            }
            for (coef, rel, rhs) in &rows {
                let rel = [Relation::Le, Relation::Ge, Relation::Eq][*rel as usize];
                let terms = coef.iter().enumerate().map(|(j, &a)| (j, a as f64 * 0.7)).collect();
                p.add_constraint(terms, rel, *rhs as f64 * 0.9, "");
            }
            let r = solve_milp(&p, &SolveLimits::default()).unwrap();
            match brute_force(&p) {
                None => proptest::prop_assert_eq!(r.status, SolveStatus::Infeasible),
                Some(v) => {
                    proptest::prop_assert_eq!(r.status, SolveStatus::Optimal);
                    proptest::prop_assert!((r.incumbent_value - v).abs() < 1e-6, "{} vs {}", r.incumbent_value, v);
                }
            }
        }
    }
}
