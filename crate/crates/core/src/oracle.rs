//! Reference solvers used to check the decomposition methods.

use crate::error::{Error, Result};
use crate::fixed_z::{solve_fixed_z, FixedZOutcome, InfeasibilityCertificate};
use crate::lp::LinearProgram;
use crate::milp::{solve_milp_with, MilpOptions, MilpStatus, MixedIntegerLinearProgram};
use crate::model::{sparse, ObjectiveTerm, StructuredMicp};

/// Integer boxes larger than this are refused by [`enumerate`].
pub const MAX_ENUMERATION: u128 = 1 << 16;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// `(z, f*(z))` for every point evaluated, in enumeration order.
    pub values: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub enum OracleOutcome {
    Solved(OracleSolution),
    Infeasible(InfeasibilityCertificate),
}

impl OracleOutcome {
    pub fn solved(self) -> Option<OracleSolution> {
        match self {
            OracleOutcome::Solved(s) => Some(s),
            OracleOutcome::Infeasible(_) => None,
        }
    }
}

/// Brute force: a fixed-integer solve at every integer point. Values are
/// accurate to `tol`.
pub fn enumerate_outcome(problem: &StructuredMicp, tol: f64) -> Result<OracleOutcome> {
    let count = problem.num_integer_points();
    if count > MAX_ENUMERATION {
        return Err(Error::InvalidParameter(format!(
            "{count} integer points exceed the enumeration limit {MAX_ENUMERATION}"
        )));
    }
    let mut best: Option<OracleSolution> = None;
    let mut values = Vec::new();
    for z in problem.integer_points() {
        match solve_fixed_z(problem, &z, tol)? {
            FixedZOutcome::Infeasible(cert) => return Ok(OracleOutcome::Infeasible(cert)),
            FixedZOutcome::Solved(sol) => {
                values.push((z.clone(), sol.value));
                if best.as_ref().map_or(true, |b| sol.value < b.value) {
                    best = Some(OracleSolution {
                        value: sol.value,
                        x: sol.x_star,
                        z,
                        values: Vec::new(),
                    });
                }
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::InvalidInstance("empty integer box".into()))?;
    best.values = values;
    Ok(OracleOutcome::Solved(best))
}

/// [`enumerate_outcome`] for problems known to be feasible.
pub fn enumerate(problem: &StructuredMicp, tol: f64) -> Result<OracleSolution> {
    enumerate_outcome(problem, tol)?
        .solved()
        .ok_or_else(|| Error::InvalidInstance("continuous feasible set is empty".into()))
}

/// Exact MILP formulation for problems whose terms are affine or absolute
/// values: each `w |q^T v + r|` becomes `t >= +-w (q^T v + r)`.
pub fn milp_direct(problem: &StructuredMicp) -> Result<OracleSolution> {
    let nx = problem.total_nx();
    let nz = problem.total_nz();
    let milp = direct_formulation(problem)?;
    let res = solve_milp_with(
        &milp,
        &MilpOptions {
            gap_tol: 1e-9,
            ..MilpOptions::default()
        },
    );
    match res.status {
        MilpStatus::Optimal => {
            let x = res.incumbent[..nx].to_vec();
            let z: Vec<f64> = res.incumbent[nx..nx + nz].iter().map(|v| v.round()).collect();
            Ok(OracleSolution {
                value: problem.evaluate(&x, &z),
                x,
                z,
                values: Vec::new(),
            })
        }
        MilpStatus::Infeasible => Err(Error::InvalidInstance("problem is infeasible".into())),
        status => Err(Error::Numerical(format!("direct MILP ended with {status:?}"))),
    }
}

/// Variables `(x, z, t)`; the objective omits the affine constants.
fn direct_formulation(problem: &StructuredMicp) -> Result<MixedIntegerLinearProgram> {
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
    for block in &problem.blocks {
        for &[lo, hi] in &block.bounds_z {
            lp.add_var(0.0, lo, hi);
        }
    }
    let mut rows = Vec::new();
    for (i, block) in problem.blocks.iter().enumerate() {
        let column = |j: usize| if j < block.nx { xo[i] + j } else { nx + zo[i] + j - block.nx };
        for term in &block.terms {
            match term {
                ObjectiveTerm::Affine { a, .. } => {
                    for (j, v) in a.iter().enumerate() {
                        lp.objective[column(j)] += v;
                    }
                }
                ObjectiveTerm::AbsL1 { q, r, w } => {
                    let t = lp.add_var(1.0, 0.0, f64::INFINITY);
                    for sign in [1.0, -1.0] {
                        let mut terms: Vec<(usize, f64)> = q
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(j, v)| (column(j), sign * w * v))
                            .collect();
                        terms.push((t, -1.0));
                        rows.push((terms, sign * w * r));
                    }
                }
                ObjectiveTerm::Power { .. } => {
                    return Err(Error::InvalidParameter(
                        "the direct MILP oracle handles affine and absolute-value terms only".into(),
                    ))
                }
            }
        }
    }
    for (row, rhs) in problem.coupling_rows().into_iter().zip(&problem.coupling.rhs) {
        lp.add_eq(row, *rhs);
    }
    for (i, block) in problem.blocks.iter().enumerate() {
        for ineq in &block.ineqs {
            lp.add_le(sparse(&ineq.coeffs, xo[i]), ineq.rhs);
        }
    }
    for (terms, rhs) in rows {
        lp.add_le(terms, rhs);
    }
    Ok(MixedIntegerLinearProgram {
        lp,
        integer_vars: (nx..nx + nz).collect(),
    })
}
