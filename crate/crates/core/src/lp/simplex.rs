//! Bounded-variable revised simplex: composite primal phase 1, primal phase 2
//! and a dual simplex for warm starts that are dual feasible.

use serde::{Deserialize, Serialize};

use super::factor::BasisFactor;
use super::{farkas_certifies, LinearProgram, LpOptions, LpResult, LpStatus, FEAS_TOL};

/// Pivots with a smaller magnitude are rejected.
const PIVOT_TOL: f64 = 1e-9;
/// Primal tolerance used while iterating; the final answer is accepted at
/// [`FEAS_TOL`].
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// Column statuses of a simplex basis: structural variables first, then one
/// slack per row (equality rows before inequality rows).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    status: Vec<VarStatus>,
    num_vars: usize,
}

impl Basis {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.status.len() - self.num_vars
    }

    pub fn status(&self) -> &[VarStatus] {
        &self.status
    }

    /// Basis for the same problem with `k` more inequality rows appended; the
    /// new slacks enter the basis, which keeps an optimal basis dual feasible.
    pub fn with_appended_rows(&self, k: usize) -> Basis {
        let mut status = self.status.clone();
        status.extend(std::iter::repeat(VarStatus::Basic).take(k));
        Basis {
            status,
            num_vars: self.num_vars,
        }
    }

    /// Basis for the same problem with `k` more structural variables appended
    /// (nonbasic).
    pub fn with_appended_vars(&self, k: usize) -> Basis {
        let mut status = self.status[..self.num_vars].to_vec();
        status.extend(std::iter::repeat(VarStatus::AtLower).take(k));
        status.extend_from_slice(&self.status[self.num_vars..]);
        Basis {
            status,
            num_vars: self.num_vars + k,
        }
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    Infeasible(Vec<f64>),
    Failure,
}

pub(crate) struct Simplex<'a> {
    lp: &'a LinearProgram,
    n: usize,
    m: usize,
    n_eq: usize,
    cols: Vec<Vec<(usize, f64)>>,
    /// Slack columns.
    units: Vec<[(usize, f64); 1]>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    status: Vec<VarStatus>,
    basic: Vec<usize>,
    x: Vec<f64>,
    factor: Option<BasisFactor>,
    refactor_every: usize,
    max_iterations: usize,
    iterations: usize,
    degenerate_run: usize,
    bland: bool,
    warm: bool,
}

impl<'a> Simplex<'a> {
    pub fn new(lp: &'a LinearProgram, warm: Option<&Basis>, options: &LpOptions) -> Self {
        let n = lp.num_vars();
        let n_eq = lp.equalities.len();
        let m = lp.num_rows();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(m);
        for (i, row) in lp.equalities.iter().chain(&lp.inequalities).enumerate() {
            for &(j, a) in &row.terms {
                if a == 0.0 {
                    continue;
                }
                match cols[j].last_mut() {
                    Some((r, v)) if *r == i => *v += a,
                    _ => cols[j].push((i, a)),
                }
            }
            b.push(row.rhs);
        }
        let mut lo = lp.lower.clone();
        let mut hi = lp.upper.clone();
        let mut cost = lp.objective.clone();
        for i in 0..m {
            lo.push(0.0);
            hi.push(if i < n_eq { 0.0 } else { f64::INFINITY });
            cost.push(0.0);
        }
        let total = n + m;
        let usable_warm = warm.filter(|basis| {
            basis.num_vars == n
                && basis.status.len() == total
                && basis.status.iter().filter(|s| **s == VarStatus::Basic).count() == m
        });
        let status = match usable_warm {
            Some(basis) => basis.status.clone(),
            None => (0..total)
                .map(|j| if j >= n { VarStatus::Basic } else { VarStatus::AtLower })
                .collect(),
        };
        let max_iterations = options
            .max_iterations
            .unwrap_or_else(|| (50 * (n + m)).max(10_000));
        let mut simplex = Self {
            lp,
            n,
            m,
            n_eq,
            cols,
            units: (0..m).map(|i| [(i, 1.0)]).collect(),
            b,
            lo,
            hi,
            cost,
            status,
            basic: Vec::new(),
            x: vec![0.0; total],
            factor: None,
            refactor_every: options.refactor_every.max(1),
            max_iterations,
            iterations: 0,
            degenerate_run: 0,
            bland: false,
            warm: usable_warm.is_some(),
        };
        for j in 0..total {
            if simplex.status[j] != VarStatus::Basic {
                simplex.status[j] = simplex.nonbasic_status(j, simplex.status[j]);
                simplex.x[j] = simplex.nonbasic_value(j);
            }
        }
        simplex
    }

    fn nonbasic_status(&self, j: usize, wanted: VarStatus) -> VarStatus {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        match wanted {
            VarStatus::AtUpper if hi.is_finite() => VarStatus::AtUpper,
            VarStatus::Free if !lo.is_finite() && !hi.is_finite() => VarStatus::Free,
            _ if lo.is_finite() => VarStatus::AtLower,
            _ if hi.is_finite() => VarStatus::AtUpper,
            _ => VarStatus::Free,
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            VarStatus::AtLower => self.lo[j],
            VarStatus::AtUpper => self.hi[j],
            _ => 0.0,
        }
    }

    fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(r, a)| a * v[r]).sum()
        } else {
            v[j - self.n]
        }
    }

    fn col_sparse(&self, j: usize) -> &[(usize, f64)] {
        if j < self.n {
            &self.cols[j]
        } else {
            &self.units[j - self.n]
        }
    }

    fn col_dense(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for &(r, a) in &self.cols[j] {
                out[r] = a;
            }
        } else {
            out[j - self.n] = 1.0;
        }
    }

    /// Factorizes the current basis, swapping in slacks for dependent columns.
    fn refactor(&mut self) -> bool {
        let total = self.n + self.m;
        for _ in 0..=self.m {
            // Slacks first so that rows left without a pivot have nonbasic slacks.
            let mut basic: Vec<usize> = (self.n..total)
                .chain(0..self.n)
                .filter(|&j| self.status[j] == VarStatus::Basic)
                .collect();
            if basic.len() != self.m {
                return false;
            }
            if !self.basic.is_empty() && self.basic.len() == self.m {
                // Keep the previous positions when the set is unchanged.
                let mut previous = self.basic.clone();
                previous.sort_unstable();
                let mut current = basic.clone();
                current.sort_unstable();
                if previous == current {
                    basic = self.basic.clone();
                    basic.sort_by_key(|&j| if j >= self.n { 0 } else { 1 });
                }
            }
            let columns: Vec<&[(usize, f64)]> = basic.iter().map(|&j| self.col_sparse(j)).collect();
            let result = BasisFactor::factorize_sparse(self.m, &columns);
            match result {
                Ok(factor) => {
                    self.basic = basic;
                    self.factor = Some(factor);
                    return true;
                }
                Err(singular) => {
                    let out = basic[singular.position];
                    self.status[out] = self.nonbasic_status(out, VarStatus::AtLower);
                    self.x[out] = self.nonbasic_value(out);
                    let slack = self.n + singular.free_row;
                    self.status[slack] = VarStatus::Basic;
                }
            }
        }
        false
    }

    fn factor(&self) -> &BasisFactor {
        self.factor.as_ref().expect("basis factorized")
    }

    fn compute_primal(&mut self) {
        let mut rhs = self.b.clone();
        for j in 0..(self.n + self.m) {
            if self.status[j] == VarStatus::Basic {
                continue;
            }
            let v = self.x[j];
            if v == 0.0 {
                continue;
            }
            if j < self.n {
                for &(r, a) in &self.cols[j] {
                    rhs[r] -= a * v;
                }
            } else {
                rhs[j - self.n] -= v;
            }
        }
        self.factor().ftran(&mut rhs);
        for (k, &j) in self.basic.iter().enumerate() {
            self.x[j] = rhs[k];
        }
    }

    /// Row duals and reduced costs for the given cost vector.
    fn duals(&self, cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pi: Vec<f64> = self.basic.iter().map(|&j| cost[j]).collect();
        self.factor().btran(&mut pi);
        let d = (0..(self.n + self.m))
            .map(|j| {
                if self.status[j] == VarStatus::Basic {
                    0.0
                } else {
                    cost[j] - self.col_dot(j, &pi)
                }
            })
            .collect();
        (pi, d)
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lo[j] {
            self.lo[j] - v
        } else if v > self.hi[j] {
            v - self.hi[j]
        } else {
            0.0
        }
    }

    fn max_infeasibility(&self) -> f64 {
        self.basic
            .iter()
            .map(|&j| self.infeasibility(j))
            .fold(0.0, f64::max)
    }

    fn is_dual_feasible(&self, d: &[f64]) -> bool {
        (0..(self.n + self.m)).all(|j| match self.status[j] {
            VarStatus::Basic => true,
            _ if self.lo[j] == self.hi[j] => true,
            VarStatus::AtLower => d[j] >= -DUAL_TOL,
            VarStatus::AtUpper => d[j] <= DUAL_TOL,
            VarStatus::Free => d[j].abs() <= DUAL_TOL,
        })
    }

    fn tick(&mut self) -> bool {
        self.iterations += 1;
        if self.iterations > self.max_iterations {
            return false;
        }
        if self.factor().num_updates() >= self.refactor_every {
            if !self.refactor() {
                return false;
            }
            self.compute_primal();
        }
        true
    }

    fn note_step(&mut self, step: f64) {
        if step <= DEGENERATE_STEP {
            self.degenerate_run += 1;
            if self.degenerate_run > 3 * (self.n + self.m) {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
            self.bland = false;
        }
    }

    /// Direction in which nonbasic `j` may move profitably given reduced cost `dj`.
    fn entering_direction(&self, j: usize, dj: f64) -> Option<f64> {
        if self.lo[j] == self.hi[j] {
            return None;
        }
        match self.status[j] {
            VarStatus::AtLower if dj < -DUAL_TOL => Some(1.0),
            VarStatus::AtUpper if dj > DUAL_TOL => Some(-1.0),
            VarStatus::Free if dj.abs() > DUAL_TOL => Some(-dj.signum()),
            _ => None,
        }
    }

    fn pivot(&mut self, pos: usize, entering: usize, leaving_status: VarStatus, w: &[f64]) {
        let leaving = self.basic[pos];
        self.status[leaving] = leaving_status;
        self.x[leaving] = self.nonbasic_value(leaving);
        self.status[entering] = VarStatus::Basic;
        self.basic[pos] = entering;
        self.factor.as_mut().expect("basis factorized").update(pos, w);
    }

    /// Primal simplex; `phase_one` minimizes the sum of bound violations of
    /// the basic variables instead of the objective.
    fn primal(&mut self, phase_one: bool) -> Outcome {
        let total = self.n + self.m;
        let mut column = vec![0.0; self.m];
        loop {
            if !self.tick() {
                return Outcome::Failure;
            }
            let cost: Vec<f64> = if phase_one {
                let mut c = vec![0.0; total];
                let mut any = false;
                for &j in &self.basic {
                    if self.x[j] < self.lo[j] - PRIMAL_TOL {
                        c[j] = -1.0;
                        any = true;
                    } else if self.x[j] > self.hi[j] + PRIMAL_TOL {
                        c[j] = 1.0;
                        any = true;
                    }
                }
                if !any {
                    return Outcome::Optimal;
                }
                c
            } else {
                self.cost.clone()
            };
            let (pi, d) = self.duals(&cost);

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..total {
                if self.status[j] == VarStatus::Basic {
                    continue;
                }
                if let Some(dir) = self.entering_direction(j, d[j]) {
                    if self.bland {
                        entering = Some((j, dir));
                        break;
                    }
                    if d[j].abs() > best {
                        best = d[j].abs();
                        entering = Some((j, dir));
                    }
                }
            }
            let Some((q, dir)) = entering else {
                if phase_one {
                    let residual: f64 = self.basic.iter().map(|&j| self.infeasibility(j)).sum();
                    if residual > FEAS_TOL {
                        return Outcome::Infeasible(pi);
                    }
                }
                return Outcome::Optimal;
            };

            self.col_dense(q, &mut column);
            self.factor().ftran(&mut column);

            let mut step = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, VarStatus)> = None;
            let mut leave_pivot = 0.0;
            for (k, &j) in self.basic.iter().enumerate() {
                let wk = column[k];
                if wk.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * wk;
                let v = self.x[j];
                let (lo, hi) = (self.lo[j], self.hi[j]);
                let below = phase_one && v < lo - PRIMAL_TOL;
                let above = phase_one && v > hi + PRIMAL_TOL;
                let candidate = if below {
                    (rate > 0.0).then(|| ((lo - v) / rate, VarStatus::AtLower))
                } else if above {
                    (rate < 0.0).then(|| ((v - hi) / -rate, VarStatus::AtUpper))
                } else if rate < 0.0 {
                    lo.is_finite().then(|| (((v - lo) / -rate).max(0.0), VarStatus::AtLower))
                } else {
                    hi.is_finite().then(|| (((hi - v) / rate).max(0.0), VarStatus::AtUpper))
                };
                let Some((t, st)) = candidate else { continue };
                let better = match leave {
                    _ if t < step - 1e-12 => true,
                    None => t <= step,
                    Some((pos, _)) if (t - step).abs() <= 1e-12 => {
                        if self.bland {
                            j < self.basic[pos]
                        } else {
                            wk.abs() > leave_pivot
                        }
                    }
                    _ => false,
                };
                if better {
                    step = t;
                    leave = Some((k, st));
                    leave_pivot = wk.abs();
                }
            }
            if !step.is_finite() {
                return if phase_one { Outcome::Failure } else { Outcome::Unbounded };
            }
            self.note_step(step);
            let delta = dir * step;
            self.x[q] += delta;
            for (k, &j) in self.basic.iter().enumerate() {
                self.x[j] -= column[k] * delta;
            }
            match leave {
                None => {
                    self.status[q] = if dir > 0.0 { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.x[q] = self.nonbasic_value(q);
                }
                Some((pos, st)) => {
                    let w = column.clone();
                    self.pivot(pos, q, st, &w);
                }
            }
        }
    }

    /// Dual simplex from a dual feasible basis.
    fn dual(&mut self) -> Outcome {
        let total = self.n + self.m;
        let mut rho = vec![0.0; self.m];
        let mut column = vec![0.0; self.m];
        loop {
            if !self.tick() {
                return Outcome::Failure;
            }
            let mut leave: Option<(usize, f64)> = None;
            let mut worst = PRIMAL_TOL;
            for (k, &j) in self.basic.iter().enumerate() {
                let v = self.infeasibility(j);
                if v > worst {
                    worst = v;
                    leave = Some((k, if self.x[j] < self.lo[j] { 1.0 } else { -1.0 }));
                }
            }
            let Some((r, s)) = leave else {
                return Outcome::Optimal;
            };
            let (_, d) = self.duals(&self.cost);
            rho.iter_mut().for_each(|v| *v = 0.0);
            rho[r] = 1.0;
            self.factor().btran(&mut rho);

            let mut entering: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..total {
                if self.status[j] == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let alpha = self.col_dot(j, &rho);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let eligible = match self.status[j] {
                    VarStatus::AtLower => s * alpha < 0.0,
                    VarStatus::AtUpper => s * alpha > 0.0,
                    VarStatus::Free => true,
                    VarStatus::Basic => false,
                };
                if !eligible {
                    continue;
                }
                let ratio = match self.status[j] {
                    VarStatus::AtLower => d[j].max(0.0),
                    VarStatus::AtUpper => (-d[j]).max(0.0),
                    _ => d[j].abs(),
                } / alpha.abs();
                let better = if ratio < best_ratio - 1e-12 {
                    true
                } else if (ratio - best_ratio).abs() <= 1e-12 {
                    if self.bland {
                        entering.map_or(true, |e| j < e)
                    } else {
                        alpha.abs() > best_alpha
                    }
                } else {
                    false
                };
                if better {
                    best_ratio = ratio;
                    best_alpha = alpha.abs();
                    entering = Some(j);
                }
            }
            let Some(q) = entering else {
                if worst > FEAS_TOL {
                    return Outcome::Infeasible(rho.iter().map(|v| -s * v).collect());
                }
                return Outcome::Optimal;
            };
            self.note_step(best_ratio);

            self.col_dense(q, &mut column);
            self.factor().ftran(&mut column);
            if column[r].abs() <= PIVOT_TOL {
                // The row and column disagree; rebuild the factorization.
                if !self.refactor() {
                    return Outcome::Failure;
                }
                self.compute_primal();
                continue;
            }
            let p = self.basic[r];
            let target = if s > 0.0 { self.lo[p] } else { self.hi[p] };
            let delta = (self.x[p] - target) / column[r];
            self.x[q] += delta;
            for (k, &j) in self.basic.iter().enumerate() {
                self.x[j] -= column[k] * delta;
            }
            let st = if s > 0.0 { VarStatus::AtLower } else { VarStatus::AtUpper };
            let w = column.clone();
            self.pivot(r, q, st, &w);
        }
    }

    pub fn solve(mut self) -> LpResult {
        let mut outcome = self.run();
        if let Outcome::Infeasible(y) = &mut outcome {
            let scale = max_abs(y);
            for (i, v) in y.iter_mut().enumerate() {
                if v.abs() <= 1e-13 * scale || (i >= self.n_eq && *v > 0.0) {
                    *v = 0.0;
                }
            }
            if !farkas_certifies(self.lp, y, 0.0) && self.warm {
                let mut cold = Simplex::new(self.lp, None, &LpOptions {
                    max_iterations: Some(self.max_iterations),
                    refactor_every: self.refactor_every,
                });
                cold.iterations = self.iterations;
                return cold.solve();
            }
        }
        self.finish(outcome)
    }

    fn run(&mut self) -> Outcome {
        if !self.refactor() {
            return Outcome::Failure;
        }
        self.compute_primal();
        for _ in 0..4 {
            if self.max_infeasibility() > PRIMAL_TOL {
                let (_, d) = self.duals(&self.cost);
                let phase = if self.is_dual_feasible(&d) { self.dual() } else { self.primal(true) };
                match phase {
                    Outcome::Optimal => {}
                    other => return other,
                }
            }
            match self.primal(false) {
                Outcome::Optimal => {}
                other => return other,
            }
            if !self.refactor() {
                return Outcome::Failure;
            }
            self.compute_primal();
            let (_, d) = self.duals(&self.cost);
            if self.max_infeasibility() <= PRIMAL_TOL && self.is_dual_feasible(&d) {
                return Outcome::Optimal;
            }
        }
        if self.max_infeasibility() <= FEAS_TOL {
            Outcome::Optimal
        } else {
            Outcome::Failure
        }
    }

    fn finish(self, outcome: Outcome) -> LpResult {
        let n = self.n;
        let mut result = LpResult {
            status: LpStatus::NumericalFailure,
            primal: self.x[..n].to_vec(),
            objective: f64::NAN,
            dual_eq: Vec::new(),
            dual_ineq: Vec::new(),
            dual_bounds: Vec::new(),
            farkas: None,
            basis: None,
            iterations: self.iterations,
        };
        match outcome {
            Outcome::Optimal => {
                let (pi, d) = self.duals(&self.cost);
                // Basic variables sit exactly within tolerance of their bounds;
                // clip so callers see in-bound values.
                let primal: Vec<f64> = (0..n).map(|j| self.x[j].clamp(self.lo[j], self.hi[j])).collect();
                if self.lp.max_violation(&primal) > FEAS_TOL * (1.0 + max_abs(&self.b)) {
                    return result;
                }
                result.status = LpStatus::Optimal;
                result.objective = self.lp.objective_value(&primal);
                result.primal = primal;
                result.dual_eq = pi[..self.n_eq].to_vec();
                result.dual_ineq = pi[self.n_eq..].to_vec();
                result.dual_bounds = d[..n].to_vec();
                result.basis = Some(Basis {
                    status: self.status,
                    num_vars: n,
                });
            }
            Outcome::Infeasible(y) => {
                if farkas_certifies(self.lp, &y, 0.0) {
                    result.status = LpStatus::Infeasible;
                    result.farkas = Some(y);
                }
            }
            Outcome::Unbounded => {
                result.status = LpStatus::Unbounded;
                result.objective = f64::NEG_INFINITY;
            }
            Outcome::Failure => {}
        }
        result
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
