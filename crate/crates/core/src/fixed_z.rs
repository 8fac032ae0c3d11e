//! Fixed-integer subproblem `min f(x, z) s.t. x in X, A x = b` by Kelley's
//! cutting-plane method on an epigraph LP.
//!
//! LP layout: a free copy `x`, the constrained variables `y` (bounds,
//! polytopes, coupling), consensus rows `x - y = 0` whose duals are the
//! subgradient `lambda`, and one epigraph variable per nonaffine term. Affine
//! terms enter the LP objective directly and `AbsL1` terms are represented
//! exactly by their two pieces, so only power terms need tangents.

use serde::{Deserialize, Serialize};

use crate::cuts::{Cut, CutOrigin};
use crate::error::{Error, Result};
use crate::lp::{farkas_certifies, solve_lp, solve_lp_with, Basis, LinearProgram, LpOptions, LpResult, LpStatus};
use crate::model::{dot, ObjectiveTerm, StructuredMicp};

#[derive(Debug, Clone)]
pub struct FixedZOptions {
    /// Stop once `f(x, z)` at the LP solution exceeds the LP value by at most this.
    pub tol_inner: f64,
    pub max_iter: usize,
}

impl FixedZOptions {
    pub fn new(tol_inner: f64) -> Self {
        Self {
            tol_inner,
            max_iter: 5_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedZSolution {
    pub z: Vec<f64>,
    /// `f(x_star, z)`, an upper bound on the subproblem value.
    pub value: f64,
    /// Value of the final cutting-plane model, a lower bound.
    pub lower: f64,
    pub x_star: Vec<f64>,
    /// Duals of the consensus rows: a subgradient of the model in `x`.
    pub lambda: Vec<f64>,
    /// Subgradient of the model in `z` at `(x_star, z)`.
    pub mu: Vec<f64>,
    pub inner_iters: usize,
    pub converged: bool,
    /// `f_i(x_star_i, z_i)`
    pub block_values: Vec<f64>,
    /// Model value of each block at `(x_star, z)`; sums to `lower`.
    pub block_models: Vec<f64>,
    /// One dual-weighted cut per nonaffine term (`slot` = term index).
    pub term_cuts: Vec<Cut>,
    /// Tangents of power terms carrying positive weight in the final LP.
    pub active_tangents: Vec<Cut>,
    /// Model value after each LP solve.
    pub model_history: Vec<f64>,
}

/// Farkas multipliers for the rows of [`StructuredMicp::feasibility_lp`]
/// (coupling equalities, then polytope inequalities by block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    pub farkas: Vec<f64>,
}

impl InfeasibilityCertificate {
    pub fn verify(&self, problem: &StructuredMicp) -> bool {
        farkas_certifies(&problem.feasibility_lp(), &self.farkas, 0.0)
    }
}

#[derive(Debug, Clone)]
pub enum FixedZOutcome {
    Solved(FixedZSolution),
    Infeasible(InfeasibilityCertificate),
}

impl FixedZOutcome {
    pub fn solved(self) -> Option<FixedZSolution> {
        match self {
            FixedZOutcome::Solved(s) => Some(s),
            FixedZOutcome::Infeasible(_) => None,
        }
    }
}

pub fn solve_fixed_z(problem: &StructuredMicp, z: &[f64], tol_inner: f64) -> Result<FixedZOutcome> {
    solve_fixed_z_with(problem, z, &FixedZOptions::new(tol_inner))
}

/// A point of `{x in X, A x = b}` close to the middle of the bounds, or a
/// certificate that the set is empty.
pub fn feasible_center(problem: &StructuredMicp) -> Result<std::result::Result<Vec<f64>, InfeasibilityCertificate>> {
    let base = problem.feasibility_lp();
    let n = base.num_vars();
    let mut lp = base.clone();
    for j in 0..n {
        let mid = 0.5 * (base.lower[j] + base.upper[j]);
        let s = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_le(vec![(j, 1.0), (s, -1.0)], mid);
        lp.add_le(vec![(j, -1.0), (s, -1.0)], -mid);
    }
    let res = solve_lp(&lp);
    match res.status {
        LpStatus::Optimal => Ok(Ok(res.primal[..n].to_vec())),
        LpStatus::Infeasible => {
            let cert = solve_lp(&base);
            match cert.farkas {
                Some(farkas) if cert.status == LpStatus::Infeasible => {
                    Ok(Err(InfeasibilityCertificate { farkas }))
                }
                _ => Err(Error::Numerical("feasibility LPs disagree".into())),
            }
        }
        status => Err(Error::Numerical(format!("feasibility LP ended with {status:?}"))),
    }
}

struct TermRef {
    block: usize,
    term: usize,
}

pub fn solve_fixed_z_with(problem: &StructuredMicp, z: &[f64], options: &FixedZOptions) -> Result<FixedZOutcome> {
    if !(options.tol_inner > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inner tolerance must be positive, got {}",
            options.tol_inner
        )));
    }
    if !problem.z_in_bounds(z) {
        return Err(Error::InvalidParameter("integer point outside the integer box".into()));
    }
    let seed = match feasible_center(problem)? {
        Ok(x) => x,
        Err(cert) => return Ok(FixedZOutcome::Infeasible(cert)),
    };

    let nx = problem.total_nx();
    let xo = problem.x_offsets();
    let zo = problem.z_offsets();
    let zi = |i: usize| &z[zo[i]..zo[i + 1]];

    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut lp = LinearProgram::new(0);
    for _ in 0..nx {
        lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    }
    for (i, block) in problem.blocks.iter().enumerate() {
        for (k, term) in block.terms.iter().enumerate() {
            match term {
                ObjectiveTerm::Affine { a, c } => {
                    for j in 0..block.nx {
                        lp.objective[xo[i] + j] += a[j];
                    }
                    constant += c + dot(&a[block.nx..], zi(i));
                }
                _ => terms.push(TermRef { block: i, term: k }),
            }
        }
    }
    for block in &problem.blocks {
        for &[lo, hi] in &block.bounds_x {
            lp.add_var(0.0, lo, hi);
        }
    }
    let eta0 = lp.num_vars();
    for _ in &terms {
        lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    }
    for g in 0..nx {
        lp.add_eq(vec![(g, 1.0), (nx + g, -1.0)], 0.0);
    }
    for (row, rhs) in problem.coupling_rows().into_iter().zip(&problem.coupling.rhs) {
        lp.add_eq(row.into_iter().map(|(c, v)| (nx + c, v)).collect(), *rhs);
    }
    for (i, block) in problem.blocks.iter().enumerate() {
        for ineq in &block.ineqs {
            let terms = crate::model::sparse(&ineq.coeffs, nx + xo[i]);
            lp.add_le(terms, ineq.rhs);
        }
    }
    let first_cut_row = lp.inequalities.len();

    // Cuts in LP row order; `slot` holds the term index within its block.
    let mut rows: Vec<(usize, Cut)> = Vec::new();
    let add_cut_row = |lp: &mut LinearProgram, rows: &mut Vec<(usize, Cut)>, t: usize, cut: Cut| {
        let i = cut.block;
        let mut coeffs: Vec<(usize, f64)> = cut
            .alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (xo[i] + j, *a))
            .collect();
        coeffs.push((eta0 + t, -1.0));
        lp.add_le(coeffs, -(cut.gamma + dot(&cut.beta, &z[zo[i]..zo[i + 1]])));
        rows.push((t, cut));
    };
    for (t, tr) in terms.iter().enumerate() {
        let block = &problem.blocks[tr.block];
        let term = &block.terms[tr.term];
        match term {
            ObjectiveTerm::AbsL1 { q, r, w } => {
                for sign in [1.0, -1.0] {
                    let g: Vec<f64> = q.iter().map(|v| sign * w * v).collect();
                    let cut = Cut {
                        block: tr.block,
                        slot: tr.term,
                        alpha: g[..block.nx].to_vec(),
                        beta: g[block.nx..].to_vec(),
                        gamma: -sign * w * r,
                        origin: CutOrigin::Exact,
                    };
                    add_cut_row(&mut lp, &mut rows, t, cut);
                }
            }
            _ => {
                let v = block.point(&seed[xo[tr.block]..xo[tr.block + 1]], zi(tr.block));
                add_cut_row(&mut lp, &mut rows, t, tangent(tr.block, tr.term, block.nx, term, &v));
            }
        }
    }

    let lp_options = LpOptions::default();
    let mut basis: Option<Basis> = None;
    let mut history = Vec::new();
    let mut iters = 0;
    let mut converged = false;
    // Cuts violated by less than this would not move the LP solution.
    let gap_share = (options.tol_inner / (2.0 * terms.len().max(1) as f64)).max(1e-10);
    let mut previous: Option<(Vec<f64>, f64)> = None;
    let (res, x) = loop {
        iters += 1;
        let res = solve_kelley_lp(&lp, basis.as_ref(), &lp_options)?;
        let x = res.primal[..nx].to_vec();
        let lower = res.objective + constant;
        history.push(lower);
        let mut upper = constant + dot(&lp.objective[..nx], &x);
        let mut new_cuts = Vec::new();
        for (t, tr) in terms.iter().enumerate() {
            let block = &problem.blocks[tr.block];
            let term = &block.terms[tr.term];
            let v = block.point(&x[xo[tr.block]..xo[tr.block + 1]], zi(tr.block));
            let f = term.value(&v);
            upper += f;
            if matches!(term, ObjectiveTerm::Power { .. }) && f - res.primal[eta0 + t] > gap_share {
                new_cuts.push((t, tangent(tr.block, tr.term, block.nx, term, &v)));
            }
        }
        if upper - lower <= options.tol_inner {
            converged = true;
            break (res, x);
        }
        let stalled = previous.as_ref().is_some_and(|(px, pl)| {
            lower <= pl + 1e-13 && px.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-12)
        });
        if iters >= options.max_iter || new_cuts.is_empty() || stalled {
            log::warn!(
                "Kelley loop stopped after {iters} iterations with gap {:.3e}",
                upper - lower
            );
            break (res, x);
        }
        let added = new_cuts.len();
        for (t, cut) in new_cuts {
            add_cut_row(&mut lp, &mut rows, t, cut);
        }
        basis = res.basis.map(|b| b.with_appended_rows(added));
        previous = Some((x, lower));
    };

    let lambda = res.dual_eq[..nx].to_vec();
    let weights: Vec<f64> = res.dual_ineq[first_cut_row..].iter().map(|d| (-d).max(0.0)).collect();

    let mut term_cuts = Vec::with_capacity(terms.len());
    let mut active_tangents = Vec::new();
    let mut block_models = vec![0.0; problem.num_blocks()];
    let mut mu = vec![0.0; problem.total_nz()];
    for (i, block) in problem.blocks.iter().enumerate() {
        let v = block.point(&x[xo[i]..xo[i + 1]], zi(i));
        for term in &block.terms {
            if let ObjectiveTerm::Affine { a, .. } = term {
                block_models[i] += term.value(&v);
                for (m, a) in mu[zo[i]..zo[i + 1]].iter_mut().zip(&a[block.nx..]) {
                    *m += a;
                }
            }
        }
    }
    for (t, tr) in terms.iter().enumerate() {
        let i = tr.block;
        let block = &problem.blocks[i];
        let (xs, zs) = (&x[xo[i]..xo[i + 1]], zi(i));
        let mine: Vec<(f64, &Cut)> = rows
            .iter()
            .zip(&weights)
            .filter(|((tt, _), _)| *tt == t)
            .map(|((_, c), w)| (*w, c))
            .collect();
        let total: f64 = mine.iter().map(|(w, _)| w).sum();
        let mut alpha = vec![0.0; block.nx];
        let mut beta = vec![0.0; block.nz];
        let mut gamma = 0.0;
        if total > 1e-12 {
            for (w, c) in &mine {
                let w = w / total;
                if w == 0.0 {
                    continue;
                }
                for (a, v) in alpha.iter_mut().zip(&c.alpha) {
                    *a += w * v;
                }
                for (b, v) in beta.iter_mut().zip(&c.beta) {
                    *b += w * v;
                }
                gamma += w * c.gamma;
            }
        } else {
            // No dual weight reached this term; fall back to its highest cut.
            let (_, c) = mine
                .iter()
                .max_by(|a, b| a.1.value(xs, zs).total_cmp(&b.1.value(xs, zs)))
                .expect("every term has a cut");
            alpha.clone_from(&c.alpha);
            beta.clone_from(&c.beta);
            gamma = c.gamma;
        }
        if matches!(block.terms[tr.term], ObjectiveTerm::Power { .. }) {
            active_tangents.extend(
                mine.iter()
                    .filter(|(w, _)| *w > 1e-12 * total.max(1.0))
                    .map(|(_, c)| (*c).clone()),
            );
        }
        let cut = Cut {
            block: i,
            slot: tr.term,
            alpha,
            beta,
            gamma,
            origin: CutOrigin::OuterIter,
        };
        block_models[i] += cut.value(xs, zs);
        for (m, b) in mu[zo[i]..zo[i + 1]].iter_mut().zip(&cut.beta) {
            *m += b;
        }
        term_cuts.push(cut);
    }
    let block_values: Vec<f64> = problem
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| b.evaluate(&x[xo[i]..xo[i + 1]], zi(i)))
        .collect();
    Ok(FixedZOutcome::Solved(FixedZSolution {
        z: z.to_vec(),
        value: block_values.iter().sum(),
        lower: block_models.iter().sum(),
        x_star: x,
        lambda,
        mu,
        inner_iters: iters,
        converged,
        block_values,
        block_models,
        term_cuts,
        active_tangents,
        model_history: history,
    }))
}

fn solve_kelley_lp(lp: &LinearProgram, warm: Option<&Basis>, options: &LpOptions) -> Result<LpResult> {
    let mut res = solve_lp_with(lp, warm, options);
    if res.status != LpStatus::Optimal && warm.is_some() {
        res = solve_lp_with(lp, None, options);
    }
    match res.status {
        LpStatus::Optimal => Ok(res),
        status => Err(Error::Numerical(format!(
            "cutting-plane LP ended with {status:?} ({} rows)",
            lp.num_rows()
        ))),
    }
}

/// Supporting hyperplane of `term` at the block point `v`.
fn tangent(block: usize, slot: usize, nx: usize, term: &ObjectiveTerm, v: &[f64]) -> Cut {
    let g = term.subgradient(v);
    let gamma = term.value(v) - dot(&g, v);
    Cut {
        block,
        slot,
        alpha: g[..nx].to_vec(),
        beta: g[nx..].to_vec(),
        gamma,
        origin: CutOrigin::OuterIter,
    }
}
