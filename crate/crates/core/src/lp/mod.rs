//! Linear programming substrate.
//!
//! A revised simplex method with a sparse LU basis factorization, over
//! problems of the form
//!
//! ```text
//! minimize    c^T x
//! subject to  E x  = h
//!             G x <= g
//!             lower <= x <= upper      (bounds may be infinite)
//! ```
//!
//! Every solve returns primal values, row duals, reduced costs and, for
//! infeasible problems, a Farkas certificate. The solver can be warm-started
//! from a [`Basis`] returned by an earlier solve, which is how branch-and-bound
//! and the cutting-plane loops avoid re-solving from scratch.

mod factor;
mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use simplex::{Basis, VarStatus};

/// Primal feasibility tolerance used to classify solutions.
pub const FEAS_TOL: f64 = 1e-7;

/// A sparse linear row `sum terms <op> rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Rows `terms = rhs`.
    pub equalities: Vec<Constraint>,
    /// Rows `terms <= rhs`.
    pub inequalities: Vec<Constraint>,
}

impl LinearProgram {
    /// `n` variables with zero cost and bounds `[0, +inf)`.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.equalities.len() + self.inequalities.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(Constraint::new(terms, rhs));
    }

    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(Constraint::new(terms, rhs));
    }

    pub fn add_ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        let terms = terms.into_iter().map(|(j, a)| (j, -a)).collect();
        self.inequalities.push(Constraint::new(terms, -rhs));
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.equalities {
            worst = worst.max((row.activity(x) - row.rhs).abs());
        }
        for row in &self.inequalities {
            worst = worst.max(row.activity(x) - row.rhs);
        }
        worst
    }

    /// Plain-text dump for bug reports. One item per line:
    /// `obj`, `bnd j lo hi`, `eq rhs j:a ...`, `le rhs j:a ...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lp {} {} {}", self.num_vars(), self.equalities.len(), self.inequalities.len());
        let _ = write!(out, "obj");
        for c in &self.objective {
            let _ = write!(out, " {c:e}");
        }
        out.push('\n');
        for j in 0..self.num_vars() {
            let _ = writeln!(out, "bnd {j} {:e} {:e}", self.lower[j], self.upper[j]);
        }
        for (tag, rows) in [("eq", &self.equalities), ("le", &self.inequalities)] {
            for row in rows {
                let _ = write!(out, "{tag} {:e}", row.rhs);
                for (j, a) in &row.terms {
                    let _ = write!(out, " {j}:{a:e}");
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The factorization broke down or the iteration limit was hit. The
    /// primal and dual vectors are not meaningful.
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows.
    pub dual_eq: Vec<f64>,
    /// Multipliers of the `<=` rows; nonpositive at optimality.
    pub dual_ineq: Vec<f64>,
    /// Reduced costs `c - A^T y` of the structural variables.
    pub dual_bounds: Vec<f64>,
    /// Row multipliers `y = (y_eq, y_ineq)` with `y_ineq <= 0` and
    /// `max_{lower<=x<=upper} (y^T A) x < y^T b`; present when infeasible
    /// unless the variable bounds themselves cross.
    pub farkas: Option<Vec<f64>>,
    /// Final basis, reusable as a warm start.
    pub basis: Option<Basis>,
    pub iterations: usize,
}

impl LpResult {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Dual objective `y^T b + sum_j min over the bound box of d_j x_j`.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let mut value = 0.0;
        for (row, y) in lp.equalities.iter().zip(&self.dual_eq) {
            value += y * row.rhs;
        }
        for (row, y) in lp.inequalities.iter().zip(&self.dual_ineq) {
            value += y * row.rhs;
        }
        for (j, d) in self.dual_bounds.iter().enumerate() {
            if *d > 0.0 {
                value += d * lp.lower[j];
            } else if *d < 0.0 {
                value += d * lp.upper[j];
            }
        }
        value
    }
}

/// Options for [`solve_lp_with`].
#[derive(Debug, Clone)]
pub struct LpOptions {
    pub max_iterations: Option<usize>,
    /// Pivots between two refactorizations of the basis.
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: None,
            refactor_every: 50,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> LpResult {
    solve_lp_with(lp, None, &LpOptions::default())
}

/// Solves `lp`, optionally starting from `warm`. A warm basis that does not
/// fit the problem (wrong size, singular) is silently replaced by the slack
/// basis. Crossed variable bounds are reported as infeasible without a row
/// certificate.
pub fn solve_lp_with(lp: &LinearProgram, warm: Option<&Basis>, options: &LpOptions) -> LpResult {
    if lp.lower.iter().zip(&lp.upper).any(|(lo, hi)| !(lo <= hi)) {
        return LpResult {
            status: LpStatus::Infeasible,
            primal: vec![f64::NAN; lp.num_vars()],
            objective: f64::NAN,
            dual_eq: Vec::new(),
            dual_ineq: Vec::new(),
            dual_bounds: Vec::new(),
            farkas: None,
            basis: None,
            iterations: 0,
        };
    }
    simplex::Simplex::new(lp, warm, options).solve()
}

/// Checks that `y` proves infeasibility of `lp`.
pub fn farkas_certifies(lp: &LinearProgram, y: &[f64], tol: f64) -> bool {
    let n = lp.num_vars();
    let n_eq = lp.equalities.len();
    if y.len() != lp.num_rows() {
        return false;
    }
    let mut combined = vec![0.0; n];
    let mut rhs = 0.0;
    for (i, row) in lp.equalities.iter().chain(&lp.inequalities).enumerate() {
        if i >= n_eq && y[i] > tol {
            return false;
        }
        for &(j, a) in &row.terms {
            combined[j] += y[i] * a;
        }
        rhs += y[i] * row.rhs;
    }
    let mut max_lhs = 0.0;
    for (j, a) in combined.iter().enumerate() {
        if a.abs() <= 1e-12 {
            continue;
        }
        let bound = if *a > 0.0 { lp.upper[j] } else { lp.lower[j] };
        if !bound.is_finite() {
            return false;
        }
        max_lhs += a * bound;
    }
    max_lhs < rhs - tol
}
