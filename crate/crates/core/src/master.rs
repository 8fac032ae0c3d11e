//! Extended-formulation master MILP over a cut pool:
//!
//! ```text
//! minimize    sum over slots of eta_s  (+ affine slots exactly)
//! subject to  A x = b,  x in X,  z integer in the box,
//!             alpha^T x_i + beta^T z_i + gamma <= eta_s   for every cut
//! ```

use crate::cuts::{CutPool, SlotKind};
use crate::error::{Error, Result};
use crate::lp::{Basis, LinearProgram};
use crate::milp::{solve_milp_with, MilpOptions, MilpStatus, MixedIntegerLinearProgram};
use crate::model::{sparse, StructuredMicp};

#[derive(Debug, Clone)]
pub struct MasterOptions {
    pub gap_tol: f64,
    /// Integer box; `None` uses the problem's.
    pub z_box: Option<Vec<[f64; 2]>>,
    /// Upper bound on interesting master values.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    /// Valid lower bound on the master optimum (and hence on the problem).
    pub lower_bound: f64,
    /// Master objective at the returned point; `None` if nothing beat the cutoff.
    pub value: Option<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Slot values at the returned point, `eta[i][s]`.
    pub eta: Vec<Vec<f64>>,
    pub nodes: usize,
    pub root_basis: Option<Basis>,
}

pub fn solve_master(problem: &StructuredMicp, pool: &CutPool, options: &MasterOptions) -> Result<MasterSolution> {
    let nx = problem.total_nx();
    let nz = problem.total_nz();
    let xo = problem.x_offsets();
    let zo = problem.z_offsets();
    let mut lp = LinearProgram::new(0);
    for block in &problem.blocks {
        for &[lo, hi] in &block.bounds_x {
            lp.add_var(0.0, lo, hi);
        }
    }
    let z_box: Vec<[f64; 2]> = match &options.z_box {
        Some(b) => b.clone(),
        None => problem.blocks.iter().flat_map(|b| b.bounds_z.clone()).collect(),
    };
    if z_box.len() != nz {
        return Err(Error::Dimension(format!("integer box has {} entries, expected {nz}", z_box.len())));
    }
    for [lo, hi] in &z_box {
        lp.add_var(0.0, *lo, *hi);
    }
    let mut constant = 0.0;
    // eta variable of each slot, or None for affine slots.
    let mut eta_var: Vec<Vec<Option<usize>>> = Vec::with_capacity(problem.num_blocks());
    for (i, slots) in pool.slots.iter().enumerate() {
        let block = &problem.blocks[i];
        let mut vars = Vec::with_capacity(slots.len());
        for (s, slot) in slots.iter().enumerate() {
            if slot.kind == SlotKind::Affine {
                let (a, c) = slot.affine.as_ref().expect("affine slot stores its term");
                for (j, v) in a.iter().enumerate() {
                    let col = if j < block.nx { xo[i] + j } else { nx + zo[i] + j - block.nx };
                    lp.objective[col] += v;
                }
                constant += c;
                vars.push(None);
            } else {
                if slot.cuts.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "block {i} slot {s} has no cuts; the master is unbounded"
                    )));
                }
                vars.push(Some(lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY)));
            }
        }
        eta_var.push(vars);
    }
    for (row, rhs) in problem.coupling_rows().into_iter().zip(&problem.coupling.rhs) {
        lp.add_eq(row, *rhs);
    }
    for (i, block) in problem.blocks.iter().enumerate() {
        for ineq in &block.ineqs {
            lp.add_le(sparse(&ineq.coeffs, xo[i]), ineq.rhs);
        }
    }
    for (i, slots) in pool.slots.iter().enumerate() {
        for (s, slot) in slots.iter().enumerate() {
            let Some(eta) = eta_var[i][s] else { continue };
            for cut in &slot.cuts {
                let mut terms = sparse(&cut.alpha, xo[i]);
                terms.extend(sparse(&cut.beta, nx + zo[i]));
                terms.push((eta, -1.0));
                lp.add_le(terms, -cut.gamma);
            }
        }
    }
    let milp = MixedIntegerLinearProgram {
        lp,
        integer_vars: (nx..nx + nz).collect(),
    };
    let milp_options = MilpOptions {
        gap_tol: options.gap_tol,
        cutoff: options.cutoff.map(|c| c - constant),
        ..MilpOptions::default()
    };
    let res = solve_milp_with(&milp, &milp_options);
    match res.status {
        MilpStatus::Optimal | MilpStatus::Cutoff | MilpStatus::GapLimit => {}
        MilpStatus::Infeasible => {
            return Err(Error::Numerical("master MILP infeasible although the problem is feasible".into()))
        }
        status => return Err(Error::Numerical(format!("master MILP ended with {status:?}"))),
    }
    let lower_bound = res.best_bound + constant;
    if !res.has_incumbent() {
        return Ok(MasterSolution {
            lower_bound,
            value: None,
            x: Vec::new(),
            z: Vec::new(),
            eta: Vec::new(),
            nodes: res.nodes,
            root_basis: None,
        });
    }
    let x = res.incumbent[..nx].to_vec();
    let z = res.incumbent[nx..nx + nz].to_vec();
    let eta = pool
        .slots
        .iter()
        .enumerate()
        .map(|(i, slots)| {
            let xi = &x[xo[i]..xo[i + 1]];
            let zi = &z[zo[i]..zo[i + 1]];
            let model = pool.slot_values(i, xi, zi).expect("slots checked above");
            slots
                .iter()
                .enumerate()
                .map(|(s, _)| eta_var[i][s].map_or(model[s], |v| res.incumbent[v]))
                .collect()
        })
        .collect();
    Ok(MasterSolution {
        lower_bound,
        value: Some(res.objective + constant),
        x,
        z,
        eta,
        nodes: res.nodes,
        root_basis: None,
    })
}
