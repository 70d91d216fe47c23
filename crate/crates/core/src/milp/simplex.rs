use std::time::Instant;

use super::{LpOutcome, MilpError, MilpProblem, PivotRule, Relation, Sense, FEASIBILITY_TOL, PIVOT_TOL};

const COST_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-12;
const DEGENERATE_RUN: usize = 100;
const PERTURB: f64 = 1e-6;
const PERTURB_ROUNDS: usize = 4;

/// Solves the LP relaxation of `problem` (integrality flags are ignored).
///
/// Returns the optimal vertex, or [`LpOutcome::Infeasible`]. Deterministic for a
/// fixed `rule`.
pub fn solve_lp(problem: &MilpProblem, rule: PivotRule) -> Result<LpOutcome, MilpError> {
    problem.validate()?;
    solve_bounded(problem, &problem.lower, &problem.upper, rule, None)
        .map(|o| o.expect("no deadline was set"))
}

/// LP solve over overridden variable bounds. `Ok(None)` means the deadline passed.
pub(crate) fn solve_bounded(
    problem: &MilpProblem,
    lower: &[f64],
    upper: &[f64],
    rule: PivotRule,
    deadline: Option<Instant>,
) -> Result<Option<LpOutcome>, MilpError> {
    Ok(match solve_cold(problem, lower, upper, rule, deadline)? {
        LpRun::Timeout => None,
        LpRun::Infeasible => Some(LpOutcome::Infeasible),
        LpRun::Optimal { x, value, .. } => Some(LpOutcome::Optimal { x, value }),
    })
}

/// Result of an LP solve that keeps the final tableau for warm starts.
pub(crate) enum LpRun {
    Optimal { x: Vec<f64>, value: f64, tab: Tableau },
    Infeasible,
    Timeout,
}

pub(crate) fn solve_cold(
    problem: &MilpProblem,
    lower: &[f64],
    upper: &[f64],
    rule: PivotRule,
    deadline: Option<Instant>,
) -> Result<LpRun, MilpError> {
    let Some(mut tab) = Tableau::build(problem, lower, upper)? else {
        return Ok(LpRun::Infeasible);
    };
    if !tab.phase_one(rule, deadline)? {
        return Ok(if tab.timed_out { LpRun::Timeout } else { LpRun::Infeasible });
    }
    if !tab.phase_two(rule, deadline)? {
        return Ok(LpRun::Timeout);
    }
    finish(tab, problem, lower, upper)
}

/// Re-solves from an optimal tableau after tightening the bounds of variable `j`
/// to `[lo, hi]`, by dual simplex. `lower`/`upper` are the full new bounds.
/// `Ok(None)` asks the caller to fall back to a cold solve.
pub(crate) fn solve_warm(
    mut tab: Tableau,
    problem: &MilpProblem,
    (j, lo, hi): (usize, f64, f64),
    lower: &[f64],
    upper: &[f64],
    rule: PivotRule,
    deadline: Option<Instant>,
) -> Result<Option<LpRun>, MilpError> {
    tab.iterations = 0;
    if !tab.set_bounds(j, lo, hi) {
        return Ok(Some(LpRun::Infeasible));
    }
    let costs = tab.phase_two_costs();
    match tab.dual_simplex(&costs, deadline) {
        Dual::Feasible => {}
        Dual::Infeasible => return Ok(Some(LpRun::Infeasible)),
        Dual::Timeout => return Ok(Some(LpRun::Timeout)),
        Dual::Stalled => return Ok(None),
    }
    match tab.phase_two(rule, deadline) {
        Ok(true) => {}
        Ok(false) => return Ok(Some(LpRun::Timeout)),
        Err(_) => return Ok(None),
    }
    match finish(tab, problem, lower, upper) {
        Ok(run) => Ok(Some(run)),
        Err(_) => Ok(None),
    }
}

fn finish(tab: Tableau, problem: &MilpProblem, lower: &[f64], upper: &[f64]) -> Result<LpRun, MilpError> {
    let x = tab.primal(lower, upper);
    let worst = problem
        .constraints
        .iter()
        .map(|r| r.violation(&x) / (1.0 + r.rhs.abs()))
        .fold(0.0, f64::max);
    if worst > 1e-6 {
        return Err(MilpError::Numerical(format!(
            "final vertex violates a row by {worst:.3e} (relative)"
        )));
    }
    let value = problem.objective_value(&x);
    Ok(LpRun::Optimal { x, value, tab })
}

enum Dual {
    Feasible,
    Infeasible,
    Timeout,
    Stalled,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

/// Dense tableau for `min c'x` over shifted variables `x' = x - lower`.
#[derive(Clone)]
pub(crate) struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x ncols` coefficients of the current basis representation.
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    col_lower: Vec<f64>,
    col_upper: Vec<f64>,
    kind: Vec<ColKind>,
    /// Original variable index for structural columns.
    col_var: Vec<usize>,
    /// Column of each original variable, `usize::MAX` if it was fixed at build.
    col_of: Vec<usize>,
    /// Lower bounds at build time; columns hold `x - shift`.
    shift: Vec<f64>,
    /// Minimization costs of structural columns.
    cost: Vec<f64>,
    rhs_scale: f64,
    timed_out: bool,
    iterations: usize,
}

impl Tableau {
    /// Returns `Ok(None)` when a row with no free columns is already violated.
    fn build(problem: &MilpProblem, lower: &[f64], upper: &[f64]) -> Result<Option<Self>, MilpError> {
        let n = problem.n_vars();
        let mut col_of = vec![usize::MAX; n];
        let mut col_var = Vec::new();
        for j in 0..n {
            if upper[j] - lower[j] > 1e-12 {
                col_of[j] = col_var.len();
                col_var.push(j);
            }
        }
        let nf = col_var.len();
        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };

        // Shift, drop empty rows, orient every row to a non-negative rhs.
        struct Row {
            dense: Vec<(usize, f64)>,
            rel: Relation,
            rhs: f64,
        }
        let mut rows = Vec::new();
        let mut scratch = vec![0.0; nf];
        let mut touched = Vec::new();
        for c in &problem.constraints {
            let mut rhs = c.rhs;
            for &(j, a) in &c.terms {
                rhs -= a * lower[j];
                let k = col_of[j];
                if k != usize::MAX {
                    if scratch[k] == 0.0 {
                        touched.push(k);
                    }
                    scratch[k] += a;
                }
            }
            let mut dense: Vec<(usize, f64)> = touched
                .drain(..)
                .filter_map(|k| {
                    let a = std::mem::take(&mut scratch[k]);
                    (a != 0.0).then_some((k, a))
                })
                .collect();
            dense.sort_unstable_by_key(|&(k, _)| k);
            let tol = FEASIBILITY_TOL * (1.0 + c.rhs.abs());
            if dense.is_empty() {
                let ok = match c.relation {
                    Relation::Le => rhs >= -tol,
                    Relation::Ge => rhs <= tol,
                    Relation::Eq => rhs.abs() <= tol,
                };
                if !ok {
                    return Ok(None);
                }
                continue;
            }
            let mut rel = c.relation;
            if rhs < 0.0 {
                rhs = -rhs;
                for e in dense.iter_mut() {
                    e.1 = -e.1;
                }
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rows.push(Row { dense, rel, rhs });
        }

        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.rel != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.rel != Relation::Le).count();
        let ncols = nf + n_slack + n_art;

        let mut kind = vec![ColKind::Structural; nf];
        kind.extend(std::iter::repeat(ColKind::Slack).take(n_slack));
        kind.extend(std::iter::repeat(ColKind::Artificial).take(n_art));
        let mut col_upper: Vec<f64> = col_var.iter().map(|&j| upper[j] - lower[j]).collect();
        col_upper.extend(std::iter::repeat(f64::INFINITY).take(n_slack + n_art));
        let cost = col_var.iter().map(|&j| sign * problem.objective[j]).collect();

        let mut t = vec![0.0; m * ncols];
        let mut beta = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut is_basic = vec![false; ncols];
        let (mut next_slack, mut next_art) = (nf, nf + n_slack);
        let mut rhs_scale: f64 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let base = i * ncols;
            for &(k, a) in &row.dense {
                t[base + k] = a;
            }
            beta[i] = row.rhs;
            rhs_scale = rhs_scale.max(row.rhs);
            match row.rel {
                Relation::Le => {
                    t[base + next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    t[base + next_slack] = -1.0;
                    next_slack += 1;
                    t[base + next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    t[base + next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
            is_basic[basis[i]] = true;
        }

        Ok(Some(Self {
            m,
            ncols,
            t,
            beta,
            basis,
            is_basic,
            at_upper: vec![false; ncols],
            col_lower: vec![0.0; ncols],
            col_upper,
            kind,
            col_var,
            col_of,
            shift: lower.to_vec(),
            cost,
            rhs_scale,
            timed_out: false,
            iterations: 0,
        }))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.ncols..(i + 1) * self.ncols]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.col_upper[j]
        } else {
            self.col_lower[j]
        }
    }

    /// Replaces the bounds of original variable `j`. Returns false if `j` was
    /// fixed at build time to a value outside `[lo, hi]`.
    fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) -> bool {
        let k = self.col_of[j];
        if k == usize::MAX {
            let v = self.shift[j];
            return v >= lo - FEASIBILITY_TOL && v <= hi + FEASIBILITY_TOL;
        }
        let old = self.nonbasic_value(k);
        self.col_lower[k] = lo - self.shift[j];
        self.col_upper[k] = hi - self.shift[j];
        if !self.is_basic[k] {
            let delta = self.nonbasic_value(k) - old;
            if delta != 0.0 {
                for i in 0..self.m {
                    let a = self.t[i * self.ncols + k];
                    if a != 0.0 {
                        self.beta[i] -= a * delta;
                    }
                }
            }
        }
        true
    }

    /// Bounded dual simplex from a dual feasible basis.
    fn dual_simplex(&mut self, costs: &[f64], deadline: Option<Instant>) -> Dual {
        let ncols = self.ncols;
        let mut d = costs.to_vec();
        for i in 0..self.m {
            let cb = d[self.basis[i]];
            if cb != 0.0 {
                for j in 0..ncols {
                    d[j] -= cb * self.t[i * ncols + j];
                }
            }
        }
        let limit = 10 * (self.m + ncols) + 1000;
        let mut it = 0;
        loop {
            it += 1;
            self.iterations += 1;
            if it > limit {
                return Dual::Stalled;
            }
            if it % 64 == 0 && deadline.is_some_and(|dl| Instant::now() >= dl) {
                self.timed_out = true;
                return Dual::Timeout;
            }
            let mut leave = None;
            let mut worst = 0.0;
            for i in 0..self.m {
                let b = self.basis[i];
                let tol = FEASIBILITY_TOL * (1.0 + self.beta[i].abs());
                let below = self.col_lower[b] - self.beta[i];
                let above = self.beta[i] - self.col_upper[b];
                if below > tol && below > worst {
                    worst = below;
                    leave = Some((i, false));
                } else if above > tol && above > worst {
                    worst = above;
                    leave = Some((i, true));
                }
            }
            let Some((r, to_upper)) = leave else {
                return Dual::Feasible;
            };
            let b = self.basis[r];
            let target = if to_upper { self.col_upper[b] } else { self.col_lower[b] };
            // The basic value must rise when it leaves at its lower bound.
            let rise = !to_upper;
            let mut enter = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..ncols {
                if self.is_basic[j] || self.col_upper[j] - self.col_lower[j] <= 0.0 {
                    continue;
                }
                let a = self.t[r * ncols + j];
                if a.abs() <= 1e-9 {
                    continue;
                }
                // beta_r moves by -a per unit increase of x_j.
                let ok = if self.at_upper[j] { (a > 0.0) == rise } else { (a < 0.0) == rise };
                if !ok {
                    continue;
                }
                let ratio = d[j].abs() / a.abs();
                if ratio < best_ratio - RATIO_TIE || (ratio <= best_ratio + RATIO_TIE && a.abs() > best_alpha) {
                    best_ratio = ratio.min(best_ratio);
                    best_alpha = a.abs();
                    enter = Some(j);
                }
            }
            let Some(q) = enter else {
                return Dual::Infeasible;
            };
            let a = self.t[r * ncols + q];
            let delta = (self.beta[r] - target) / a;
            for i in 0..self.m {
                let aiq = self.t[i * ncols + q];
                if aiq != 0.0 {
                    self.beta[i] -= aiq * delta;
                }
            }
            let entering_value = self.nonbasic_value(q) + delta;
            self.pivot(r, q, Some(&mut d));
            self.beta[r] = entering_value;
            self.at_upper[q] = false;
            self.at_upper[b] = to_upper;
        }
    }

    /// Approximate heap footprint in bytes.
    pub(crate) fn footprint(&self) -> usize {
        self.t.len() * 8 + self.ncols * 40 + self.m * 16
    }

    /// Returns false when the problem is infeasible or the deadline passed.
    fn phase_one(&mut self, rule: PivotRule, deadline: Option<Instant>) -> Result<bool, MilpError> {
        if self.kind.iter().all(|&k| k != ColKind::Artificial) {
            return Ok(true);
        }
        let costs: Vec<f64> = self
            .kind
            .iter()
            .map(|&k| if k == ColKind::Artificial { 1.0 } else { 0.0 })
            .collect();
        if !self.optimize(&costs, rule, deadline, false)? {
            return Ok(false);
        }
        let infeasibility: f64 = (0..self.m)
            .filter(|&i| self.kind[self.basis[i]] == ColKind::Artificial)
            .map(|i| self.beta[i])
            .sum();
        if infeasibility > FEASIBILITY_TOL * (1.0 + self.rhs_scale) {
            return Ok(false);
        }
        // Drive zero-valued artificials out of the basis where possible.
        for r in 0..self.m {
            if self.kind[self.basis[r]] != ColKind::Artificial {
                continue;
            }
            let row = self.row(r);
            let q = (0..self.ncols)
                .filter(|&j| !self.is_basic[j] && self.kind[j] != ColKind::Artificial)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)));
            if let Some(q) = q {
                if self.row(r)[q].abs() > 1e-9 {
                    let value = self.nonbasic_value(q);
                    self.pivot(r, q, None);
                    self.beta[r] = value;
                    self.at_upper[q] = false;
                }
            }
        }
        for j in 0..self.ncols {
            if self.kind[j] == ColKind::Artificial {
                self.col_upper[j] = 0.0;
            }
        }
        Ok(true)
    }

    fn phase_two_costs(&self) -> Vec<f64> {
        let mut costs = vec![0.0; self.ncols];
        costs[..self.cost.len()].copy_from_slice(&self.cost);
        costs
    }

    fn phase_two(&mut self, rule: PivotRule, deadline: Option<Instant>) -> Result<bool, MilpError> {
        let costs = self.phase_two_costs();
        self.optimize(&costs, rule, deadline, true)
    }

    /// Relaxes the bounds of basic variables sitting at a bound by a small,
    /// row-dependent amount, so degenerate pivots make progress.
    fn perturb(&mut self, round: usize) {
        for i in 0..self.m {
            let b = self.basis[i];
            if self.kind[b] == ColKind::Artificial {
                continue;
            }
            let jitter = 1.0 + ((i.wrapping_mul(2_654_435_761).wrapping_add(round * 97)) % 1000) as f64 / 1000.0;
            let lo = self.col_lower[b];
            if self.beta[i] - lo <= PERTURB * (1.0 + lo.abs()) {
                self.col_lower[b] = lo - PERTURB * (1.0 + lo.abs()) * jitter;
            }
            let hi = self.col_upper[b];
            if hi.is_finite() && hi - self.beta[i] <= PERTURB * (1.0 + hi.abs()) {
                self.col_upper[b] = hi + PERTURB * (1.0 + hi.abs()) * jitter;
            }
        }
    }

    /// Puts back the bounds saved before [`Self::perturb`], moving nonbasic
    /// columns onto their true bounds.
    fn restore_bounds(&mut self, lower: &[f64], upper: &[f64]) {
        for k in 0..self.ncols {
            if self.col_lower[k] == lower[k] && self.col_upper[k] == upper[k] {
                continue;
            }
            let old = self.nonbasic_value(k);
            self.col_lower[k] = lower[k];
            self.col_upper[k] = upper[k];
            if !self.is_basic[k] {
                let delta = self.nonbasic_value(k) - old;
                if delta != 0.0 {
                    for i in 0..self.m {
                        let a = self.t[i * self.ncols + k];
                        if a != 0.0 {
                            self.beta[i] -= a * delta;
                        }
                    }
                }
            }
        }
    }

    /// Primal simplex on the current basis. Returns false only on deadline.
    fn optimize(
        &mut self,
        costs: &[f64],
        rule: PivotRule,
        deadline: Option<Instant>,
        block_artificials: bool,
    ) -> Result<bool, MilpError> {
        let ncols = self.ncols;
        // Reduced costs d_j = c_j - sum_i c_B(i) T[i][j].
        let mut d = costs.to_vec();
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for (dj, tij) in d.iter_mut().zip(self.row(i)) {
                    *dj -= cb * tij;
                }
            }
        }
        let max_iter = 20 * (self.m + ncols) + 10_000;
        let mut bland = rule == PivotRule::Bland;
        let mut degenerate_run = 0;
        let mut rounds = 0;
        let mut saved: Option<(Vec<f64>, Vec<f64>)> = None;
        loop {
            self.iterations += 1;
            if self.iterations > max_iter {
                return Err(MilpError::IterationLimit(max_iter));
            }
            if self.iterations % 64 == 0 {
                if let Some(dl) = deadline {
                    if Instant::now() >= dl {
                        self.timed_out = true;
                        return Ok(false);
                    }
                }
            }

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..ncols {
                if self.is_basic[j] || (block_artificials && self.kind[j] == ColKind::Artificial) {
                    continue;
                }
                if self.col_upper[j] - self.col_lower[j] <= 0.0 {
                    continue;
                }
                let dir = if !self.at_upper[j] && d[j] < -COST_TOL {
                    1.0
                } else if self.at_upper[j] && d[j] > COST_TOL {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d[j].abs() > best {
                    best = d[j].abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                let Some((lower, upper)) = saved.take() else {
                    return Ok(true);
                };
                self.restore_bounds(&lower, &upper);
                match self.dual_simplex(costs, deadline) {
                    Dual::Feasible => {}
                    Dual::Timeout => return Ok(false),
                    Dual::Infeasible | Dual::Stalled => {
                        return Err(MilpError::Numerical("could not repair a perturbed basis".into()))
                    }
                }
                // Recompute reduced costs for the repaired basis.
                d = costs.to_vec();
                for i in 0..self.m {
                    let cb = costs[self.basis[i]];
                    if cb != 0.0 {
                        for (dj, tij) in d.iter_mut().zip(self.row(i)) {
                            *dj -= cb * tij;
                        }
                    }
                }
                degenerate_run = 0;
                continue;
            };

            // Ratio test.
            let mut theta = self.col_upper[q] - self.col_lower[q];
            let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper)
            let mut leave_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.t[i * ncols + q] * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let (limit, to_upper) = if alpha > 0.0 {
                    ((self.beta[i] - self.col_lower[b]).max(0.0) / alpha, false)
                } else {
                    let ub = self.col_upper[b];
                    if !ub.is_finite() {
                        continue;
                    }
                    ((ub - self.beta[i]).max(0.0) / -alpha, true)
                };
                let better = match leave {
                    None => limit < theta,
                    Some((r, _)) => {
                        if limit < theta - RATIO_TIE {
                            true
                        } else if limit <= theta + RATIO_TIE {
                            if bland {
                                b < self.basis[r]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = theta.min(limit);
                    leave = Some((i, to_upper));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Err(MilpError::Numerical(format!("unbounded direction on column {q}")));
            }

            if theta <= RATIO_TIE {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_RUN && !bland {
                    if rounds < PERTURB_ROUNDS {
                        if saved.is_none() {
                            saved = Some((self.col_lower.clone(), self.col_upper.clone()));
                        }
                        self.perturb(rounds);
                        rounds += 1;
                        degenerate_run = 0;
                    } else {
                        bland = true;
                    }
                }
            } else {
                degenerate_run = 0;
            }

            // Move basic values along the edge.
            if theta > 0.0 {
                for i in 0..self.m {
                    let a = self.t[i * ncols + q];
                    if a != 0.0 {
                        self.beta[i] -= a * dir * theta;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.at_upper[q] = !self.at_upper[q];
                }
                Some((r, to_upper)) => {
                    let entering_value = self.nonbasic_value(q) + dir * theta;
                    let leaving = self.basis[r];
                    self.pivot(r, q, Some(&mut d));
                    self.beta[r] = entering_value;
                    self.at_upper[q] = false;
                    self.at_upper[leaving] = to_upper;
                }
            }
        }
    }

    /// Pivots column `q` into the basis at row `r`, updating `d` if given.
    fn pivot(&mut self, r: usize, q: usize, d: Option<&mut Vec<f64>>) {
        let ncols = self.ncols;
        let p = self.t[r * ncols + q];
        let inv = 1.0 / p;
        {
            let row_r = &mut self.t[r * ncols..(r + 1) * ncols];
            for v in row_r.iter_mut() {
                *v *= inv;
            }
            row_r[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * ncols);
        let (row_r, after) = rest.split_at_mut(ncols);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for (v, pr) in row.iter_mut().zip(row_r.iter()) {
                    *v -= f * pr;
                }
                row[q] = 0.0;
            }
        };
        for row in before.chunks_exact_mut(ncols) {
            eliminate(row);
        }
        for row in after.chunks_exact_mut(ncols) {
            eliminate(row);
        }
        if let Some(d) = d {
            let f = d[q];
            if f != 0.0 {
                for (v, pr) in d.iter_mut().zip(row_r.iter()) {
                    *v -= f * pr;
                }
                d[q] = 0.0;
            }
        }
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    fn primal(&self, lower: &[f64], upper: &[f64]) -> Vec<f64> {
        let mut x = lower.to_vec();
        let mut shifted = vec![0.0; self.ncols];
        for j in 0..self.ncols {
            if !self.is_basic[j] {
                shifted[j] = self.nonbasic_value(j);
            }
        }
        for i in 0..self.m {
            shifted[self.basis[i]] = self.beta[i];
        }
        for (k, &j) in self.col_var.iter().enumerate() {
            x[j] = (self.shift[j] + shifted[k]).clamp(lower[j], upper[j]);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(sense: Sense) -> MilpProblem {
        MilpProblem::new(sense)
    }

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, value } => (x, value),
            LpOutcome::Infeasible => panic!("expected an optimum"),
        }
    }

    #[test]
    fn single_variable_capped_by_row() {
        let mut p = lp(Sense::Maximize);
        let x = p.add_var(1.0, 0.0, 10.0, false);
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 3.0, "");
        for rule in [PivotRule::Bland, PivotRule::Dantzig] {
            let (sol, v) = optimal(solve_lp(&p, rule).unwrap());
            assert!((sol[0] - 3.0).abs() < 1e-9);
            assert!((v - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = lp(Sense::Maximize);
        let x = p.add_var(1.0, -5.0, 5.0, false);
        p.add_constraint(vec![(x, 1.0)], Relation::Ge, 1.0, "");
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 0.0, "");
        assert_eq!(solve_lp(&p, PivotRule::Bland).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn two_variable_vertex() {
        // Vertices of {x+y<=4, x<=2, x,y>=0}: (0,0),(2,0),(2,2),(0,4); 3x+2y peaks at (2,2).
        let mut p = lp(Sense::Maximize);
        let x = p.add_var(3.0, 0.0, 100.0, false);
        let y = p.add_var(2.0, 0.0, 100.0, false);
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Le, 4.0, "");
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 2.0, "");
        for rule in [PivotRule::Bland, PivotRule::Dantzig] {
            let (sol, v) = optimal(solve_lp(&p, rule).unwrap());
            assert!((sol[0] - 2.0).abs() < 1e-9 && (sol[1] - 2.0).abs() < 1e-9);
            assert!((v - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn equality_rows_and_negative_rhs() {
        // min x + y s.t. x - y = -1, x + y >= 3, 0 <= x,y <= 5 -> x=1, y=2.
        let mut p = lp(Sense::Minimize);
        let x = p.add_var(1.0, 0.0, 5.0, false);
        let y = p.add_var(1.0, 0.0, 5.0, false);
        p.add_constraint(vec![(x, 1.0), (y, -1.0)], Relation::Eq, -1.0, "");
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 3.0, "");
        let (_, v) = optimal(solve_lp(&p, PivotRule::Dantzig).unwrap());
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_variables_are_substituted() {
        let mut p = lp(Sense::Maximize);
        let x = p.add_var(1.0, 2.0, 2.0, false);
        let y = p.add_var(1.0, 0.0, 10.0, false);
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Le, 5.0, "");
        let (sol, v) = optimal(solve_lp(&p, PivotRule::Bland).unwrap());
        assert_eq!(sol[0], 2.0);
        assert!((sol[1] - 3.0).abs() < 1e-9);
        assert!((v - 5.0).abs() < 1e-9);

        let mut q = lp(Sense::Maximize);
        let a = q.add_var(1.0, 2.0, 2.0, false);
        q.add_constraint(vec![(a, 1.0)], Relation::Le, 1.0, "");
        assert_eq!(solve_lp(&q, PivotRule::Bland).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn upper_bounds_handled_by_bound_flips() {
        // max x + y with only bounds: both at upper.
        let mut p = lp(Sense::Maximize);
        p.add_var(1.0, -1.0, 3.0, false);
        p.add_var(1.0, 0.0, 4.0, false);
        let (sol, v) = optimal(solve_lp(&p, PivotRule::Dantzig).unwrap());
        assert_eq!(sol, vec![3.0, 4.0]);
        assert!((v - 7.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_terms_in_a_row_are_merged() {
        let mut p = lp(Sense::Maximize);
        let x = p.add_var(1.0, 0.0, 10.0, false);
        p.add_constraint(vec![(x, 1.0), (x, 1.0)], Relation::Le, 4.0, "");
        let (sol, _) = optimal(solve_lp(&p, PivotRule::Bland).unwrap());
        assert!((sol[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        let mut p = lp(Sense::Maximize);
        p.add_var(1.0, 0.0, f64::INFINITY, false);
        assert!(matches!(solve_lp(&p, PivotRule::Bland), Err(MilpError::Invalid(_))));
    }
}
