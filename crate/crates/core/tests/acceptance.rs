//! Acceptance suite: prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.

use std::time::{Duration, Instant};

use padoa_core::lp::{farkas_certifies, solve_lp, LinearProgram, LpResult, LpStatus};
use padoa_core::master::{solve_master, MasterOptions};
use padoa_core::milp::{solve_milp, MilpStatus, MixedIntegerLinearProgram};
use padoa_core::model::Coupling;
use padoa_core::oracle::{enumerate, milp_direct, OracleSolution};
use padoa_core::random::{random_instance, RandomSpec};
use padoa_core::tcl::{generate, TclConfig, Topology};
use padoa_core::trace::IterationTrace;
use padoa_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

type Outcome = std::result::Result<String, String>;

/// One solved instance of the random suite.
struct RandomCase {
    seed: u64,
    problem: StructuredMicp,
    oracle: OracleSolution,
    oa: Result<OaResult>,
    padoa: Result<PadoaResult>,
}

/// One TCL configuration with its solver runs and their wall times.
struct TclCase {
    label: String,
    oa: (Result<OaResult>, Duration),
    padoa: (Result<PadoaResult>, Duration),
    reference: (Result<f64>, Duration),
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail}")
            }
        }
    };

    let suite_start = Instant::now();
    let suite = random_suite();
    let suite_time = suite_start.elapsed();
    let tcl_milp = tcl_milp_suite();
    let tcl_convex = tcl_convex_suite();

    report(1, "oracle equivalence", oracle_equivalence(&suite, suite_time));
    report(2, "one iteration from the optimum", start_at_optimum(&suite));
    report(3, "visited sets grow", visited_sets_grow(&suite, &tcl_milp, &tcl_convex));
    report(4, "cut model exact on visited points", cut_model_exact(&suite));
    report(5, "tcl milp cross-check", tcl_milp_check(&tcl_milp));
    report(6, "tcl convex cross-check", tcl_convex_check(&tcl_convex));
    report(7, "lp and milp substrate", substrate());
    report(8, "bound sandwich", bound_sandwich(&suite, &tcl_milp, &tcl_convex));
    report(9, "decoupled instances in one iteration", decoupled());

    println!("acceptance finished in {:.1} s", started.elapsed().as_secs_f64());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn random_suite() -> Vec<RandomCase> {
    (0..50u64)
        .map(|seed| {
            let problem = random_instance(seed, &RandomSpec::default());
            let oracle = enumerate(&problem, 1e-9).expect("suite instances are feasible");
            let oa = solve_oa(&problem, &OaOptions::new(EPS));
            let padoa = solve_padoa(&problem, &PadoaOptions::new(EPS));
            RandomCase {
                seed,
                problem,
                oracle,
                oa,
                padoa,
            }
        })
        .collect()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn tcl_configs() -> Vec<(String, TclConfig)> {
    let mut out = Vec::new();
    for (rooms, topology) in [(3, Topology::Complete), (4, Topology::Cycle)] {
        for horizon in [8, 24] {
            out.push((format!("R{rooms}H{horizon}"), TclConfig::new(rooms, horizon, topology)));
        }
    }
    out
}

fn tcl_milp_suite() -> Vec<TclCase> {
    tcl_configs()
        .into_iter()
        .map(|(label, config)| {
            let problem = generate(&config).expect("default configurations are valid");
            TclCase {
                label,
                oa: timed(|| solve_oa(&problem, &OaOptions::new(EPS))),
                padoa: timed(|| solve_padoa(&problem, &PadoaOptions::new(EPS))),
                reference: timed(|| milp_direct(&problem).map(|s| s.value)),
            }
        })
        .collect()
}

fn tcl_convex_suite() -> Vec<TclCase> {
    let mut out = Vec::new();
    for order in [2, 4] {
        for (rooms, topology) in [(3, Topology::Complete), (4, Topology::Cycle)] {
            let mut config = TclConfig::new(rooms, 8, topology);
            config.gamma = 1.0;
            config.order = order;
            let problem = generate(&config).expect("default configurations are valid");
            let oa = timed(|| solve_oa(&problem, &OaOptions::new(1e-8)));
            let reference = (
                oa.0.as_ref().map(|r| r.value).map_err(|e| Error::Numerical(e.to_string())),
                oa.1,
            );
            out.push(TclCase {
                label: format!("R{rooms}H8p{order}"),
                padoa: timed(|| solve_padoa(&problem, &PadoaOptions::new(EPS))),
                oa,
                reference,
            });
        }
    }
    out
}

fn oracle_equivalence(suite: &[RandomCase], elapsed: Duration) -> Outcome {
    let mut worst = 0.0f64;
    for case in suite {
        let oa = case.oa.as_ref().map_err(|e| format!("seed {}: oa {e}", case.seed))?;
        let padoa = case.padoa.as_ref().map_err(|e| format!("seed {}: padoa {e}", case.seed))?;
        if oa.status != SolveStatus::Optimal || padoa.status != SolveStatus::Optimal {
            return Err(format!("seed {}: status oa {:?} padoa {:?}", case.seed, oa.status, padoa.status));
        }
        for (name, value) in [("oa", oa.value), ("padoa", padoa.value)] {
            let diff = (value - case.oracle.value).abs();
            worst = worst.max(diff);
            if diff > EPS {
                return Err(format!(
                    "seed {}: {name} {value} vs enumerate {}",
                    case.seed, case.oracle.value
                ));
            }
        }
    }
    let detail = format!(
        "{} instances, max |diff| {worst:.2e}, {:.2} s",
        suite.len(),
        elapsed.as_secs_f64()
    );
    if elapsed > Duration::from_secs(60) {
        return Err(format!("{detail} exceeds 60 s"));
    }
    Ok(detail)
}

fn start_at_optimum(suite: &[RandomCase]) -> Outcome {
    let mut misses = Vec::new();
    for case in suite {
        let mut options = PadoaOptions::new(EPS);
        options.epsilon_lower = Some(EPS / 2.0);
        options.z0 = Some(case.oracle.z.clone());
        let run = solve_padoa(&case.problem, &options).map_err(|e| format!("seed {}: {e}", case.seed))?;
        if run.iterations != 1 || run.status != SolveStatus::Optimal {
            misses.push(format!("seed {} ({:?}, {} iterations)", case.seed, run.status, run.iterations));
        }
    }
    let detail = format!("{} of {} instances", suite.len() - misses.len(), suite.len());
    if misses.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; missed {}", misses.join(", ")))
    }
}

fn visited_sets_grow(suite: &[RandomCase], milp: &[TclCase], convex: &[TclCase]) -> Outcome {
    let mut runs = 0;
    let mut check = |label: &str, oa: Option<&Result<OaResult>>, padoa: Option<&Result<PadoaResult>>| -> Outcome {
        for err in [oa.and_then(|r| r.as_ref().err()), padoa.and_then(|r| r.as_ref().err())]
            .into_iter()
            .flatten()
        {
            if let Error::InvariantViolation(msg) = err {
                return Err(format!("{label}: {msg}"));
            }
        }
        runs += usize::from(oa.is_some()) + usize::from(padoa.is_some());
        Ok(String::new())
    };
    for case in suite {
        check(&format!("seed {}", case.seed), Some(&case.oa), Some(&case.padoa))?;
    }
    for case in milp.iter().chain(convex) {
        check(&case.label, Some(&case.oa.0), Some(&case.padoa.0))?;
    }
    Ok(format!("no invariant violation in {runs} runs"))
}

fn cut_model_exact(suite: &[RandomCase]) -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    for case in suite {
        let total = case.oa.as_ref().map_err(|e| e.to_string())?.iterations;
        for k in 1..=total {
            let mut options = OaOptions::new(EPS);
            options.max_iter = k;
            let run = solve_oa(&case.problem, &options).map_err(|e| format!("seed {}: {e}", case.seed))?;
            for z in &run.visited {
                let exact = match solve_fixed_z(&case.problem, z, 1e-9).map_err(|e| e.to_string())? {
                    FixedZOutcome::Solved(s) => s.value,
                    FixedZOutcome::Infeasible(_) => return Err(format!("seed {}: infeasible at {z:?}", case.seed)),
                };
                let model = solve_master(
                    &case.problem,
                    &run.pool,
                    &MasterOptions {
                        gap_tol: 0.0,
                        z_box: Some(z.iter().map(|&v| [v, v]).collect()),
                        cutoff: None,
                    },
                )
                .map_err(|e| format!("seed {}: {e}", case.seed))?;
                let diff = (model.lower_bound - exact).abs();
                worst = worst.max(diff);
                if diff > EPS {
                    return Err(format!(
                        "seed {} iteration {k} z {z:?}: model {} vs {exact}",
                        case.seed, model.lower_bound
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} points, max |diff| {worst:.2e}"))
}

fn tcl_check(cases: &[TclCase], tol: f64, limit: Option<Duration>, max_padoa_iters: Option<usize>) -> Outcome {
    let mut lines = Vec::new();
    for case in cases {
        let oa = case.oa.0.as_ref().map_err(|e| format!("{}: oa {e}", case.label))?;
        let padoa = case.padoa.0.as_ref().map_err(|e| format!("{}: padoa {e}", case.label))?;
        let reference = case.reference.0.as_ref().map_err(|e| format!("{}: reference {e}", case.label))?;
        if oa.status != SolveStatus::Optimal || padoa.status != SolveStatus::Optimal {
            return Err(format!("{}: status oa {:?} padoa {:?}", case.label, oa.status, padoa.status));
        }
        for (name, value) in [("oa", oa.value), ("padoa", padoa.value)] {
            if (value - reference).abs() > tol {
                return Err(format!("{}: {name} {value} vs reference {reference}", case.label));
            }
        }
        if let Some(limit) = limit {
            for (name, t) in [("oa", case.oa.1), ("padoa", case.padoa.1), ("milp-direct", case.reference.1)] {
                if t > limit {
                    return Err(format!("{}: {name} took {:.1} s", case.label, t.as_secs_f64()));
                }
            }
        }
        if let Some(max) = max_padoa_iters {
            if padoa.iterations > max {
                return Err(format!("{}: padoa needed {} iterations", case.label, padoa.iterations));
            }
        }
        lines.push(format!(
            "{} {:.6} ({} it, {:.1}/{:.1}/{:.1} s)",
            case.label,
            reference,
            padoa.iterations,
            case.padoa.1.as_secs_f64(),
            case.oa.1.as_secs_f64(),
            case.reference.1.as_secs_f64()
        ));
    }
    Ok(lines.join("; "))
}

fn tcl_milp_check(cases: &[TclCase]) -> Outcome {
    tcl_check(cases, EPS, Some(Duration::from_secs(120)), None)
}

fn tcl_convex_check(cases: &[TclCase]) -> Outcome {
    tcl_check(cases, 1e-4, None, Some(10))
}

fn sandwich(label: &str, trace: &IterationTrace, status: SolveStatus, eps: f64) -> Outcome {
    for w in trace.rows.windows(2) {
        if w[1].lower < w[0].lower || w[1].upper > w[0].upper {
            return Err(format!("{label}: iteration {} breaks monotonicity", w[1].iter));
        }
    }
    let last = trace.last().ok_or_else(|| format!("{label}: empty trace"))?;
    if status == SolveStatus::Optimal && !(last.upper - last.lower <= eps) {
        return Err(format!("{label}: final gap {}", last.upper - last.lower));
    }
    Ok(String::new())
}

fn bound_sandwich(suite: &[RandomCase], milp: &[TclCase], convex: &[TclCase]) -> Outcome {
    let mut rows = 0;
    let mut check_pair = |label: &str, oa: &Result<OaResult>, oa_eps: f64, padoa: &Result<PadoaResult>| -> Outcome {
        let oa = oa.as_ref().map_err(|e| format!("{label}: {e}"))?;
        let padoa = padoa.as_ref().map_err(|e| format!("{label}: {e}"))?;
        sandwich(&format!("{label} oa"), &oa.trace, oa.status, oa_eps)?;
        sandwich(&format!("{label} padoa"), &padoa.trace, padoa.status, EPS)?;
        rows += oa.trace.len() + padoa.trace.len();
        Ok(String::new())
    };
    for case in suite {
        check_pair(&format!("seed {}", case.seed), &case.oa, EPS, &case.padoa)?;
    }
    for case in milp {
        check_pair(&case.label, &case.oa.0, EPS, &case.padoa.0)?;
    }
    for case in convex {
        check_pair(&case.label, &case.oa.0, 1e-8, &case.padoa.0)?;
    }
    Ok(format!("{rows} trace rows"))
}

fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..6);
    let neq = rng.gen_range(0..3);
    let nle = rng.gen_range(0..5);
    let mut lp = LinearProgram::new(0);
    for _ in 0..n {
        let c = rng.gen_range(-5.0..5.0);
        let lo = rng.gen_range(-3.0..0.0);
        let hi = rng.gen_range(0.0..3.0);
        lp.add_var(c, lo, hi);
    }
    for i in 0..neq + nle {
        let terms: Vec<(usize, f64)> = (0..n)
            .map(|j| (j, f64::from(rng.gen_range(-4i32..5))))
            .filter(|(_, a)| *a != 0.0)
            .collect();
        let rhs = rng.gen_range(-4.0..6.0);
        if i < neq {
            lp.add_eq(terms, rhs);
        } else {
            lp.add_le(terms, rhs);
        }
    }
    lp
}

fn optimality_defect(lp: &LinearProgram, res: &LpResult) -> Option<String> {
    let tol = 1e-7;
    if lp.max_violation(&res.primal) > tol {
        return Some(format!("primal violation {}", lp.max_violation(&res.primal)));
    }
    let dual = res.dual_objective(lp);
    if (res.objective - dual).abs() > tol * (1.0 + res.objective.abs()) {
        return Some(format!("primal {} dual {dual}", res.objective));
    }
    for (row, y) in lp.inequalities.iter().zip(&res.dual_ineq) {
        let slack = row.rhs - row.activity(&res.primal);
        if *y > 1e-9 || (y * slack).abs() > tol {
            return Some(format!("row dual {y} slack {slack}"));
        }
    }
    for (j, d) in res.dual_bounds.iter().enumerate() {
        let x = res.primal[j];
        let gap = if *d > 0.0 { x - lp.lower[j] } else { lp.upper[j] - x };
        if (gap * d).abs() > tol {
            return Some(format!("reduced cost {d} at distance {gap} from its bound"));
        }
    }
    None
}

fn random_binary_milp(rng: &mut ChaCha8Rng) -> MixedIntegerLinearProgram {
    let binaries = rng.gen_range(1..=12);
    let n = binaries + rng.gen_range(0..3);
    let mut lp = LinearProgram::new(0);
    for j in 0..n {
        let hi = if j < binaries { 1.0 } else { 2.5 };
        lp.add_var(f64::from(rng.gen_range(-10i32..10)), 0.0, hi);
    }
    for _ in 0..rng.gen_range(1..4) {
        let terms = (0..n).map(|j| (j, f64::from(rng.gen_range(-5i32..6)))).collect();
        lp.add_le(terms, f64::from(rng.gen_range(0i32..12)));
    }
    MixedIntegerLinearProgram {
        lp,
        integer_vars: (0..binaries).collect(),
    }
}

/// Minimum over all binary assignments of the LP in the continuous part.
fn enumerate_binaries(milp: &MixedIntegerLinearProgram) -> Option<f64> {
    let k = milp.integer_vars.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << k) {
        let mut lp = milp.lp.clone();
        for (bit, &j) in milp.integer_vars.iter().enumerate() {
            let v = f64::from((mask >> bit) & 1);
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        let res = solve_lp(&lp);
        if res.status == LpStatus::Optimal {
            best = Some(best.map_or(res.objective, |b: f64| b.min(res.objective)));
        }
    }
    best
}

fn substrate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut optimal, mut infeasible) = (0, 0);
    for i in 0..400 {
        let lp = random_lp(&mut rng);
        let res = solve_lp(&lp);
        match res.status {
            LpStatus::Optimal => {
                if let Some(defect) = optimality_defect(&lp, &res) {
                    return Err(format!("lp {i}: {defect}"));
                }
                optimal += 1;
            }
            LpStatus::Infeasible => {
                if !res.farkas.as_ref().is_some_and(|y| farkas_certifies(&lp, y, 0.0)) {
                    return Err(format!("lp {i}: infeasible without a valid certificate"));
                }
                infeasible += 1;
            }
            status => return Err(format!("lp {i}: {status:?}")),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let milp = random_binary_milp(&mut rng);
        let res = solve_milp(&milp, 0.0);
        match enumerate_binaries(&milp) {
            None if res.status == MilpStatus::Infeasible => {}
            None => return Err(format!("milp {i}: {:?} but enumeration is infeasible", res.status)),
            Some(best) => {
                if res.status != MilpStatus::Optimal || (res.objective - best).abs() > 1e-9 {
                    return Err(format!("milp {i}: {:?} {} vs {best}", res.status, res.objective));
                }
            }
        }
    }
    Ok(format!(
        "400 lps ({optimal} optimal, {infeasible} infeasible), 100 milps match enumeration"
    ))
}

/// Solves every block on its own and sums the optima.
fn blockwise_optimum(problem: &StructuredMicp) -> Result<f64> {
    let mut total = 0.0;
    for block in &problem.blocks {
        let single = StructuredMicp {
            blocks: vec![block.clone()],
            coupling: Coupling::default(),
            copies: vec![],
        };
        total += enumerate(&single, 1e-9)?.value;
    }
    Ok(total)
}

fn decoupled() -> Outcome {
    for seed in 0..20u64 {
        let problem = random_instance(1000 + seed, &RandomSpec::decoupled());
        let run = solve_padoa(&problem, &PadoaOptions::new(EPS)).map_err(|e| format!("seed {seed}: {e}"))?;
        let best = blockwise_optimum(&problem).map_err(|e| format!("seed {seed}: {e}"))?;
        if run.iterations != 1 || (run.value - best).abs() > EPS {
            return Err(format!(
                "seed {seed}: {} iterations, value {} vs blockwise {best}",
                run.iterations, run.value
            ));
        }
    }
    Ok("20 of 20 instances".into())
}
