//! Outer approximation: alternate fixed-integer solves, which give upper
//! bounds and cuts, with master MILPs over the cut pool, which give lower
//! bounds and the next integer point.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cuts::{cuts_for_pool, Cut, CutGranularity, CutOrigin, CutPool, MAX_CUTS};
use crate::error::{Error, Result};
use crate::fixed_z::{solve_fixed_z_with, FixedZOptions, FixedZOutcome, FixedZSolution, InfeasibilityCertificate};
use crate::master::{solve_master, MasterOptions, MasterSolution};
use crate::model::StructuredMicp;
use crate::trace::{IterationTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct OaOptions {
    pub epsilon: f64,
    /// Defaults to `epsilon / 2`.
    pub tol_inner: Option<f64>,
    /// Absolute gap of the master MILPs; defaults to `epsilon / 10`.
    pub master_gap: Option<f64>,
    pub max_iter: usize,
    /// Starting integer point; defaults to the lower bounds of the box.
    pub z0: Option<Vec<f64>>,
    /// Restricts the integer variables to a sub-box of the problem's.
    pub z_box: Option<Vec<[f64; 2]>>,
    pub granularity: CutGranularity,
    pub origin: CutOrigin,
    /// Drop inactive cuts after every master solve.
    pub prune: bool,
}

impl OaOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol_inner: None,
            master_gap: None,
            max_iter: 1000,
            z0: None,
            z_box: None,
            granularity: CutGranularity::default(),
            origin: CutOrigin::OuterIter,
            prune: false,
        }
    }

    pub fn tol_inner(&self) -> f64 {
        self.tol_inner.unwrap_or(self.epsilon / 2.0)
    }

    pub fn master_gap(&self) -> f64 {
        self.master_gap.unwrap_or(self.epsilon / 10.0)
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let (t, g) = (self.tol_inner(), self.master_gap());
        if !(t > 0.0) || !(g >= 0.0) || t + g > self.epsilon {
            return Err(Error::InvalidParameter(format!(
                "need 0 < tol_inner and tol_inner + master_gap <= epsilon, got {t} + {g} > {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OaResult {
    pub status: SolveStatus,
    /// Best objective found, `+inf` when none.
    pub value: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub lower_bound: f64,
    pub iterations: usize,
    pub trace: IterationTrace,
    pub pool: CutPool,
    /// Cuts this run added to the pool, in insertion order.
    pub new_cuts: Vec<Cut>,
    /// Integer points evaluated, in order.
    pub visited: Vec<Vec<f64>>,
    pub certificate: Option<InfeasibilityCertificate>,
    /// Kelley iterations summed over all fixed-integer solves.
    pub inner_iters: usize,
}

pub fn solve_oa(problem: &StructuredMicp, options: &OaOptions) -> Result<OaResult> {
    let pool = CutPool::new(problem, options.granularity);
    solve_oa_from(problem, options, pool, None)
}

/// OA starting from an existing pool. `first` may carry a fixed-integer
/// solution at the starting point that was computed elsewhere.
pub fn solve_oa_from(
    problem: &StructuredMicp,
    options: &OaOptions,
    pool: CutPool,
    first: Option<FixedZSolution>,
) -> Result<OaResult> {
    options.check()?;
    problem.check()?;
    run_oa(problem, options, pool, first)
}

/// [`solve_oa_from`] without re-validating the problem.
pub(crate) fn run_oa(
    problem: &StructuredMicp,
    options: &OaOptions,
    mut pool: CutPool,
    mut first: Option<FixedZSolution>,
) -> Result<OaResult> {
    options.check()?;
    if pool.granularity != options.granularity || pool.num_blocks() != problem.num_blocks() {
        return Err(Error::InvalidParameter("cut pool does not match the problem or granularity".into()));
    }
    let z_box: Vec<[f64; 2]> = match &options.z_box {
        Some(b) => b.clone(),
        None => problem.blocks.iter().flat_map(|b| b.bounds_z.clone()).collect(),
    };
    if z_box.len() != problem.total_nz() {
        return Err(Error::Dimension(format!(
            "integer box has {} entries, expected {}",
            z_box.len(),
            problem.total_nz()
        )));
    }
    let mut z = match &options.z0 {
        Some(z0) => z0.clone(),
        None => z_box.iter().map(|b| b[0]).collect(),
    };
    if z.len() != z_box.len()
        || z.iter().zip(&z_box).any(|(v, b)| v.fract() != 0.0 || *v < b[0] || *v > b[1])
    {
        return Err(Error::InvalidParameter(format!("starting point {z:?} is not an integer point of the box")));
    }
    let fz_options = FixedZOptions::new(options.tol_inner());
    let mut result = OaResult {
        status: SolveStatus::NotConverged,
        value: f64::INFINITY,
        x: Vec::new(),
        z: Vec::new(),
        lower_bound: f64::NEG_INFINITY,
        iterations: 0,
        trace: IterationTrace::default(),
        pool: CutPool::new(problem, options.granularity),
        new_cuts: Vec::new(),
        visited: Vec::new(),
        certificate: None,
        inner_iters: 0,
    };
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut pruned = false;
    for iter in 1..=options.max_iter {
        result.iterations = iter;
        let t0 = Instant::now();
        let reused = first.take().filter(|s| s.z == z);
        let sol = match reused {
            Some(s) => s,
            None => match solve_fixed_z_with(problem, &z, &fz_options)? {
                FixedZOutcome::Solved(s) => s,
                FixedZOutcome::Infeasible(cert) => {
                    result.status = SolveStatus::Infeasible;
                    result.certificate = Some(cert);
                    result.pool = pool;
                    return Ok(result);
                }
            },
        };
        let t_sub = t0.elapsed().as_secs_f64() * 1e3;
        result.inner_iters += sol.inner_iters;
        if seen.insert(key(&z)) {
            result.visited.push(z.clone());
        }
        if sol.value < result.value {
            result.value = sol.value;
            result.x = sol.x_star.clone();
            result.z = z.clone();
        }
        for cut in cuts_for_pool(problem, &sol, options.granularity, options.origin) {
            if pool.add(cut.clone()) {
                result.new_cuts.push(cut);
            }
        }

        let t1 = Instant::now();
        let master = run_master(problem, &mut pool, &z_box, options.master_gap(), options.prune, result.value, (&sol.x_star, &sol.z), &mut pruned)?;
        let t_master = t1.elapsed().as_secs_f64() * 1e3;
        result.lower_bound = result.lower_bound.max(master.lower_bound);
        result.trace.push(TraceRow {
            iter,
            upper: result.value,
            lower: result.lower_bound,
            num_cuts: pool.len(),
            card_pi: seen.len(),
            t_sub_ms: t_sub,
            t_master_ms: t_master,
            master_bound: master.lower_bound,
            block_values: Vec::new(),
            block_iters: Vec::new(),
        });
        log::debug!(
            "oa iter {iter}: U={} LB={} cuts={} |Pi|={}",
            result.value,
            result.lower_bound,
            pool.len(),
            seen.len()
        );
        if result.value - result.lower_bound <= options.epsilon || master.value.is_none() {
            result.status = SolveStatus::Optimal;
            break;
        }
        let next: Vec<f64> = master.z.iter().map(|v| v.round()).collect();
        if seen.contains(&key(&next)) && !pruned {
            return Err(Error::InvariantViolation(format!(
                "master returned the evaluated point {next:?} with U={} and LB={}",
                result.value, result.lower_bound
            )));
        }
        z = next;
    }
    result.pool = pool;
    Ok(result)
}

pub(crate) fn run_master(
    problem: &StructuredMicp,
    pool: &mut CutPool,
    z_box: &[[f64; 2]],
    gap_tol: f64,
    prune: bool,
    upper: f64,
    last: (&[f64], &[f64]),
    pruned: &mut bool,
) -> Result<MasterSolution> {
    if pool.len() > MAX_CUTS {
        let eta = slot_values_at(pool, problem, last.0, last.1)?;
        *pool = pool.prune(last.0, last.1, &eta);
        *pruned = true;
    }
    let master = solve_master(
        problem,
        pool,
        &MasterOptions {
            gap_tol,
            z_box: Some(z_box.to_vec()),
            cutoff: Some(upper),
        },
    )?;
    if prune && master.value.is_some() {
        *pool = pool.prune(&master.x, &master.z, &master.eta);
        *pruned = true;
    }
    Ok(master)
}

fn slot_values_at(pool: &CutPool, problem: &StructuredMicp, x: &[f64], z: &[f64]) -> Result<Vec<Vec<f64>>> {
    let xo = problem.x_offsets();
    let zo = problem.z_offsets();
    (0..problem.num_blocks())
        .map(|i| pool.slot_values(i, &x[xo[i]..xo[i + 1]], &z[zo[i]..zo[i + 1]]))
        .collect()
}

pub(crate) fn key(z: &[f64]) -> Vec<i64> {
    z.iter().map(|v| v.round() as i64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate;
    use crate::random::{random_instance, tiny, RandomSpec};

    #[test]
    fn tiny_from_worst_start() {
        let p = tiny();
        let mut o = OaOptions::new(1e-6);
        o.z0 = Some(vec![1.0, 1.0]);
        let r = solve_oa(&p, &o).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 0.5).abs() <= 1e-6, "{}", r.value);
        assert_eq!(r.z, vec![0.0, 0.0]);
        assert!(r.value - r.lower_bound <= 1e-6);
    }

    #[test]
    fn both_granularities_agree_with_enumeration() {
        for seed in 0..25 {
            let p = random_instance(seed, &RandomSpec::default());
            let truth = enumerate(&p, 1e-8).unwrap();
            for gran in [CutGranularity::Term, CutGranularity::Block] {
                let mut o = OaOptions::new(1e-6);
                o.granularity = gran;
                let r = solve_oa(&p, &o).unwrap();
                assert_eq!(r.status, SolveStatus::Optimal, "seed {seed} {gran:?}");
                assert!(
                    (r.value - truth.value).abs() <= 1e-6 + 1e-8,
                    "seed {seed} {gran:?}: {} vs {}",
                    r.value,
                    truth.value
                );
                assert!(r.lower_bound <= truth.value + 1e-7, "seed {seed}: LB above optimum");
                let lbs: Vec<f64> = r.trace.rows.iter().map(|t| t.lower).collect();
                assert!(lbs.windows(2).all(|w| w[0] <= w[1]));
                let ubs: Vec<f64> = r.trace.rows.iter().map(|t| t.upper).collect();
                assert!(ubs.windows(2).all(|w| w[0] >= w[1]));
                assert!(r.trace.rows.iter().all(|t| t.lower <= t.upper + 1e-7));
                assert_eq!(r.visited.len(), r.iterations, "every iteration evaluates a new point");
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = tiny();
        assert!(matches!(solve_oa(&p, &OaOptions::new(0.0)), Err(Error::InvalidParameter(_))));
        let mut o = OaOptions::new(1e-6);
        o.tol_inner = Some(1e-6);
        assert!(matches!(solve_oa(&p, &o), Err(Error::InvalidParameter(_))));
        let mut o = OaOptions::new(1e-6);
        o.z0 = Some(vec![0.5, 0.0]);
        assert!(matches!(solve_oa(&p, &o), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn iteration_limit_reports_not_converged() {
        let p = tiny();
        let mut o = OaOptions::new(1e-6);
        o.z0 = Some(vec![1.0, 1.0]);
        o.max_iter = 1;
        let r = solve_oa(&p, &o).unwrap();
        assert_eq!(r.status, SolveStatus::NotConverged);
        assert!((r.value - 2.5).abs() <= 1e-6);
    }
}
