//! Partially decoupled OA. Each outer iteration solves, for every block `k`,
//! the problem in which only block `k`'s integers are free and the others
//! stay at the current point. The block problems run in parallel on
//! snapshots of the shared pool; their cuts are merged in block order and a
//! master MILP over the merged pool gives the lower bound and the next point.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;

use crate::cuts::{cuts_for_pool, Cut, CutGranularity, CutOrigin, CutPool};
use crate::error::{Error, Result};
use crate::fixed_z::{solve_fixed_z_with, FixedZOptions, FixedZOutcome, FixedZSolution, InfeasibilityCertificate};
use crate::model::StructuredMicp;
use crate::oa::{key, run_master, run_oa, OaOptions, SolveStatus};
use crate::trace::{IterationTrace, TraceRow};

#[derive(Debug, Clone)]
pub struct PadoaOptions {
    pub epsilon: f64,
    /// Tolerance of the block subproblems; defaults to `epsilon / 2`.
    pub epsilon_lower: Option<f64>,
    pub max_iter: usize,
    /// Starting point; defaults to the lower bounds.
    pub z0: Option<Vec<f64>>,
    /// Worker threads for the block subproblems.
    pub threads: usize,
    pub granularity: CutGranularity,
    /// Drop inactive cuts after every master solve.
    pub prune: bool,
    /// Also evaluate the point assembled from every block's best integers.
    pub composite: bool,
}

impl PadoaOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            epsilon_lower: None,
            max_iter: 1000,
            z0: None,
            threads: 1,
            granularity: CutGranularity::default(),
            prune: false,
            composite: true,
        }
    }

    pub fn epsilon_lower(&self) -> f64 {
        self.epsilon_lower.unwrap_or(self.epsilon / 2.0)
    }

    /// Master gap: the slack `epsilon - epsilon_lower` is what the
    /// termination argument leaves for it.
    fn master_gap(&self) -> f64 {
        (self.epsilon / 10.0).min((self.epsilon - self.epsilon_lower()) / 2.0)
    }

    fn check(&self) -> Result<()> {
        let (e, el) = (self.epsilon, self.epsilon_lower());
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {e}")));
        }
        if !(el > 0.0) || el > e {
            return Err(Error::InvalidParameter(format!("need 0 < epsilon_lower <= epsilon, got {el} and {e}")));
        }
        if self.threads == 0 || self.max_iter == 0 {
            return Err(Error::InvalidParameter("threads and max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BlockSubproblemResult {
    pub block: usize,
    /// Best value found with only this block's integers free.
    pub value: f64,
    /// Best integers of block `k`.
    pub zeta_star: Vec<f64>,
    /// The full point `(x, z)` attaining `value`.
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Lower bound of the subproblem's final master.
    pub lower_bound: f64,
    /// Cuts the subproblem added beyond its starting pool.
    pub cuts: Vec<Cut>,
    pub iterations: usize,
    pub inner_iters: usize,
    pub trace: IterationTrace,
}

#[derive(Debug, Clone)]
pub enum BlockOutcome {
    Solved(BlockSubproblemResult),
    Infeasible(InfeasibilityCertificate),
}

/// Integer box with every block except `k` fixed to `z`.
pub fn block_box(problem: &StructuredMicp, z: &[f64], k: usize) -> Vec<[f64; 2]> {
    let zo = problem.z_offsets();
    let mut out = Vec::with_capacity(z.len());
    for (i, block) in problem.blocks.iter().enumerate() {
        for j in 0..block.nz {
            let v = z[zo[i] + j];
            out.push(if i == k { block.bounds_z[j] } else { [v, v] });
        }
    }
    out
}

/// OA over block `k`'s integers with the rest fixed to `z`, to tolerance
/// `epsilon_lower`, starting from `pool`.
pub fn solve_block_subproblem(
    problem: &StructuredMicp,
    z: &[f64],
    k: usize,
    epsilon_lower: f64,
    pool: &CutPool,
) -> Result<BlockOutcome> {
    if k >= problem.num_blocks() {
        return Err(Error::InvalidParameter(format!("block {k} out of range")));
    }
    problem.check()?;
    block_subproblem(problem, z, k, epsilon_lower, pool.clone(), None)
}

fn block_subproblem(
    problem: &StructuredMicp,
    z: &[f64],
    k: usize,
    epsilon_lower: f64,
    pool: CutPool,
    first: Option<FixedZSolution>,
) -> Result<BlockOutcome> {
    let mut options = OaOptions::new(epsilon_lower);
    options.z0 = Some(z.to_vec());
    options.z_box = Some(block_box(problem, z, k));
    options.granularity = pool.granularity;
    options.origin = CutOrigin::InnerBlock;
    let points = problem.blocks[k]
        .bounds_z
        .iter()
        .fold(1usize, |acc, [lo, hi]| acc.saturating_mul((hi - lo + 1.0).max(1.0) as usize));
    options.max_iter = points.saturating_add(1);
    let res = run_oa(problem, &options, pool, first)?;
    if let Some(cert) = res.certificate {
        return Ok(BlockOutcome::Infeasible(cert));
    }
    if res.status != SolveStatus::Optimal {
        return Err(Error::InvariantViolation(format!(
            "block {k} subproblem did not converge in {} iterations",
            res.iterations
        )));
    }
    let zo = problem.z_offsets();
    Ok(BlockOutcome::Solved(BlockSubproblemResult {
        block: k,
        value: res.value,
        zeta_star: res.z[zo[k]..zo[k + 1]].to_vec(),
        x: res.x,
        z: res.z,
        lower_bound: res.lower_bound,
        cuts: res.new_cuts,
        iterations: res.iterations,
        inner_iters: res.inner_iters,
        trace: res.trace,
    }))
}

#[derive(Debug, Clone)]
pub struct PadoaResult {
    pub status: SolveStatus,
    pub value: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub lower_bound: f64,
    pub iterations: usize,
    pub trace: IterationTrace,
    pub pool: CutPool,
    /// The outer iterates: the start followed by every master point.
    pub iterates: Vec<Vec<f64>>,
    /// Points assembled from a block's best integers, in insertion order.
    pub candidates: Vec<Vec<f64>>,
    /// Subproblem results of the last iteration.
    pub last_blocks: Vec<BlockSubproblemResult>,
    pub certificate: Option<InfeasibilityCertificate>,
}

pub fn solve_padoa(problem: &StructuredMicp, options: &PadoaOptions) -> Result<PadoaResult> {
    options.check()?;
    problem.check()?;
    let n = problem.num_blocks();
    let mut z: Vec<f64> = match &options.z0 {
        Some(z0) => z0.clone(),
        None => problem.z_lower(),
    };
    if !problem.z_in_bounds(&z) || z.iter().any(|v| v.fract() != 0.0) {
        return Err(Error::InvalidParameter(format!("starting point {z:?} is not an integer point of the box")));
    }
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let fz_options = FixedZOptions::new(options.epsilon_lower() / 2.0);
    let mut pool = CutPool::new(problem, options.granularity);
    let mut result = PadoaResult {
        status: SolveStatus::NotConverged,
        value: f64::INFINITY,
        x: Vec::new(),
        z: Vec::new(),
        lower_bound: f64::NEG_INFINITY,
        iterations: 0,
        trace: IterationTrace::default(),
        pool: CutPool::new(problem, options.granularity),
        iterates: vec![z.clone()],
        candidates: Vec::new(),
        last_blocks: Vec::new(),
        certificate: None,
    };
    let mut pi: HashSet<Vec<i64>> = HashSet::new();
    let mut shadow: HashSet<Vec<i64>> = HashSet::from([key(&z)]);
    let mut evaluated: HashSet<Vec<i64>> = HashSet::new();
    let mut pruned = false;
    for iter in 1..=options.max_iter {
        result.iterations = iter;
        let t0 = Instant::now();
        let first = match solve_fixed_z_with(problem, &z, &fz_options)? {
            FixedZOutcome::Solved(s) => s,
            FixedZOutcome::Infeasible(cert) => {
                result.status = SolveStatus::Infeasible;
                result.certificate = Some(cert);
                result.pool = pool;
                return Ok(result);
            }
        };
        evaluated.insert(key(&z));
        let snapshot = &pool;
        let outcomes: Vec<Result<BlockOutcome>> = workers.install(|| {
            (0..n)
                .into_par_iter()
                .map(|k| block_subproblem(problem, &z, k, options.epsilon_lower(), snapshot.clone(), Some(first.clone())))
                .collect()
        });
        let mut blocks = Vec::with_capacity(n);
        for outcome in outcomes {
            match outcome? {
                BlockOutcome::Solved(b) => blocks.push(b),
                BlockOutcome::Infeasible(cert) => {
                    result.status = SolveStatus::Infeasible;
                    result.certificate = Some(cert);
                    result.pool = pool;
                    return Ok(result);
                }
            }
        }
        for b in &blocks {
            if b.value < result.value {
                result.value = b.value;
                result.x = b.x.clone();
                result.z = b.z.clone();
            }
            if pi.insert(key(&b.z)) {
                result.candidates.push(b.z.clone());
            }
            pool.extend(b.cuts.iter().cloned());
        }
        if options.composite {
            let zo = problem.z_offsets();
            let mut composite = z.clone();
            for b in &blocks {
                composite[zo[b.block]..zo[b.block + 1]].copy_from_slice(&b.zeta_star);
            }
            if evaluated.insert(key(&composite)) && !blocks.iter().any(|b| b.z == composite) {
                if let FixedZOutcome::Solved(sol) = solve_fixed_z_with(problem, &composite, &fz_options)? {
                    if sol.value < result.value {
                        result.value = sol.value;
                        result.x = sol.x_star.clone();
                        result.z = composite.clone();
                    }
                    pool.extend(cuts_for_pool(problem, &sol, options.granularity, CutOrigin::OuterIter));
                }
            }
        }
        let t_sub = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let z_box: Vec<[f64; 2]> = problem.blocks.iter().flat_map(|b| b.bounds_z.clone()).collect();
        let master = run_master(
            problem,
            &mut pool,
            &z_box,
            options.master_gap(),
            options.prune,
            result.value,
            (&result.x, &result.z),
            &mut pruned,
        )?;
        let t_master = t1.elapsed().as_secs_f64() * 1e3;
        result.lower_bound = result.lower_bound.max(master.lower_bound);
        result.trace.push(TraceRow {
            iter,
            upper: result.value,
            lower: result.lower_bound,
            num_cuts: pool.len(),
            card_pi: pi.len(),
            t_sub_ms: t_sub,
            t_master_ms: t_master,
            master_bound: master.lower_bound,
            block_values: blocks.iter().map(|b| b.value).collect(),
            block_iters: blocks.iter().map(|b| b.iterations).collect(),
        });
        log::debug!(
            "padoa iter {iter}: U={} LB={} cuts={} |Pi|={}",
            result.value,
            result.lower_bound,
            pool.len(),
            pi.len()
        );
        result.last_blocks = blocks;
        if result.value - result.lower_bound <= options.epsilon || master.value.is_none() {
            result.status = SolveStatus::Optimal;
            break;
        }
        let next: Vec<f64> = master.z.iter().map(|v| v.round()).collect();
        if !shadow.insert(key(&next)) && !pruned {
            return Err(Error::InvariantViolation(format!(
                "master returned the earlier iterate {next:?} with U={} and LB={}",
                result.value, result.lower_bound
            )));
        }
        result.iterates.push(next.clone());
        z = next;
    }
    result.pool = pool;
    Ok(result)
}
