//! Block-separable mixed-integer convex programs with affine coupling of the
//! continuous variables:
//!
//! ```text
//! minimize    sum_i f_i(x_i, z_i)
//! subject to  A x = b,   x_i in X_i (polytope),   z_i in Z_i (integer box)
//! ```
//!
//! Each `f_i` is a sum of [`ObjectiveTerm`]s. Global continuous and integer
//! indices concatenate the blocks in declaration order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};

pub const DEFAULT_PENALTY: f64 = 1e4;

/// Tolerance for reformulation copies to count as equal to their integers.
pub const COPY_TOL: f64 = 1e-6;

/// One convex term of a block objective. Coefficient vectors run over the
/// block's variables `v = (x_i, z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ObjectiveTerm {
    /// `a^T v + c`
    #[serde(rename = "affine")]
    Affine { a: Vec<f64>, c: f64 },
    /// `w (q^T v - r)^p` with `p` in {2, 4}
    #[serde(rename = "power")]
    Power { q: Vec<f64>, r: f64, p: u32, w: f64 },
    /// `w |q^T v - r|`
    #[serde(rename = "abs_l1")]
    AbsL1 { q: Vec<f64>, r: f64, w: f64 },
}

impl ObjectiveTerm {
    pub fn coeffs(&self) -> &[f64] {
        match self {
            ObjectiveTerm::Affine { a, .. } => a,
            ObjectiveTerm::Power { q, .. } | ObjectiveTerm::AbsL1 { q, .. } => q,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ObjectiveTerm::Affine { .. })
    }

    pub fn is_convex(&self) -> bool {
        let finite = self.coeffs().iter().all(|v| v.is_finite());
        finite
            && match self {
                ObjectiveTerm::Affine { c, .. } => c.is_finite(),
                ObjectiveTerm::Power { r, p, w, .. } => {
                    r.is_finite() && w.is_finite() && *w >= 0.0 && (*p == 2 || *p == 4)
                }
                ObjectiveTerm::AbsL1 { r, w, .. } => r.is_finite() && w.is_finite() && *w >= 0.0,
            }
    }

    fn inner(&self, v: &[f64]) -> f64 {
        dot(self.coeffs(), v)
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        match self {
            ObjectiveTerm::Affine { c, .. } => self.inner(v) + c,
            ObjectiveTerm::Power { r, p, w, .. } => w * (self.inner(v) - r).powi(*p as i32),
            ObjectiveTerm::AbsL1 { r, w, .. } => w * (self.inner(v) - r).abs(),
        }
    }

    /// A subgradient at `v`; at the kink of `AbsL1` the zero slope is chosen.
    pub fn subgradient(&self, v: &[f64]) -> Vec<f64> {
        let scale = match self {
            ObjectiveTerm::Affine { .. } => 1.0,
            ObjectiveTerm::Power { r, p, w, .. } => {
                w * f64::from(*p) * (self.inner(v) - r).powi(*p as i32 - 1)
            }
            ObjectiveTerm::AbsL1 { r, w, .. } => {
                let t = self.inner(v) - r;
                if t > 0.0 {
                    *w
                } else if t < 0.0 {
                    -w
                } else {
                    0.0
                }
            }
        };
        self.coeffs().iter().map(|q| scale * q).collect()
    }
}

/// `coeffs^T x_i <= rhs` over the block's continuous variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIneq {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub nx: usize,
    pub nz: usize,
    #[serde(with = "bounds_serde")]
    pub bounds_x: Vec<[f64; 2]>,
    #[serde(with = "bounds_serde")]
    pub bounds_z: Vec<[f64; 2]>,
    #[serde(default)]
    pub ineqs: Vec<LinearIneq>,
    #[serde(default)]
    pub terms: Vec<ObjectiveTerm>,
}

impl BlockSpec {
    fn check_dims(&self, x: &[f64], z: &[f64]) {
        assert!(
            x.len() == self.nx && z.len() == self.nz,
            "block expects {} continuous and {} integer values, got {} and {}",
            self.nx,
            self.nz,
            x.len(),
            z.len()
        );
    }

    /// The concatenated point `(x_i, z_i)`.
    pub fn point(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        self.check_dims(x, z);
        x.iter().chain(z).copied().collect()
    }

    pub fn evaluate(&self, x: &[f64], z: &[f64]) -> f64 {
        let v = self.point(x, z);
        self.terms.iter().map(|t| t.value(&v)).sum()
    }

    pub fn subgradient(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = self.point(x, z);
        let mut g = vec![0.0; self.nx + self.nz];
        for term in &self.terms {
            for (gi, si) in g.iter_mut().zip(term.subgradient(&v)) {
                *gi += si;
            }
        }
        let gz = g.split_off(self.nx);
        (g, gz)
    }
}

/// `f_i(x_i, z_i)`; panics on dimension mismatch.
pub fn evaluate_objective(block: &BlockSpec, x: &[f64], z: &[f64]) -> f64 {
    block.evaluate(x, z)
}

/// A subgradient `(g_x, g_z)` of `f_i` at `(x_i, z_i)`; panics on dimension
/// mismatch.
pub fn subgradient(block: &BlockSpec, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    block.subgradient(x, z)
}

/// Sparse `A x = b` over the global continuous variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// `(row, column, value)`
    #[serde(default)]
    pub triplets: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub rhs: Vec<f64>,
}

/// A continuous copy introduced for an integer variable that appeared in the
/// coupling rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerCopy {
    pub block: usize,
    /// Local continuous index of the copy.
    pub x: usize,
    /// Local integer index of the original.
    pub z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMicp {
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub copies: Vec<IntegerCopy>,
}

/// On-disk instance: a [`StructuredMicp`] that may also couple integers.
#[derive(Debug, Deserialize)]
struct InstanceFile {
    blocks: Vec<BlockSpec>,
    #[serde(default)]
    coupling: Coupling,
    #[serde(default)]
    copies: Vec<IntegerCopy>,
    #[serde(default)]
    coupling_z: Option<Coupling>,
    #[serde(default)]
    penalty: Option<f64>,
}

impl StructuredMicp {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_nx(&self) -> usize {
        self.blocks.iter().map(|b| b.nx).sum()
    }

    pub fn total_nz(&self) -> usize {
        self.blocks.iter().map(|b| b.nz).sum()
    }

    pub fn num_coupling_rows(&self) -> usize {
        self.coupling.rhs.len()
    }

    /// Start of each block's continuous variables; has `N + 1` entries.
    pub fn x_offsets(&self) -> Vec<usize> {
        offsets(self.blocks.iter().map(|b| b.nx))
    }

    pub fn z_offsets(&self) -> Vec<usize> {
        offsets(self.blocks.iter().map(|b| b.nz))
    }

    pub fn block_of_z(&self, col: usize) -> (usize, usize) {
        locate(&self.z_offsets(), col)
    }

    /// Coupling rows as sparse lists, duplicates summed.
    pub fn coupling_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_coupling_rows()];
        for &(r, c, v) in &self.coupling.triplets {
            match rows[r].iter_mut().find(|(col, _)| *col == c) {
                Some(entry) => entry.1 += v,
                None => rows[r].push((c, v)),
            }
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        rows
    }

    pub fn evaluate(&self, x: &[f64], z: &[f64]) -> f64 {
        let xo = self.x_offsets();
        let zo = self.z_offsets();
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.evaluate(&x[xo[i]..xo[i + 1]], &z[zo[i]..zo[i + 1]]))
            .sum()
    }

    /// Componentwise lower bound of the integer box.
    pub fn z_lower(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.bounds_z.iter().map(|[lo, _]| lo.ceil()))
            .collect()
    }

    pub fn z_upper(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.bounds_z.iter().map(|[_, hi]| hi.floor()))
            .collect()
    }

    pub fn z_in_bounds(&self, z: &[f64]) -> bool {
        z.len() == self.total_nz()
            && z.iter()
                .zip(self.z_lower().iter().zip(self.z_upper()))
                .all(|(v, (lo, hi))| v.fract() == 0.0 && *v >= *lo && *v <= hi)
    }

    /// Number of points in the integer box (saturating).
    pub fn num_integer_points(&self) -> u128 {
        self.z_lower()
            .iter()
            .zip(self.z_upper())
            .fold(1u128, |acc, (lo, hi)| acc.saturating_mul((hi - lo + 1.0).max(0.0) as u128))
    }

    /// All integer points in lexicographic order (last component fastest).
    pub fn integer_points(&self) -> IntegerPoints {
        let lower = self.z_lower();
        let upper = self.z_upper();
        let empty = lower.iter().zip(&upper).any(|(lo, hi)| lo > hi);
        IntegerPoints {
            current: if empty { None } else { Some(lower.clone()) },
            lower,
            upper,
        }
    }

    /// Feasibility LP over `x`: bounds, polytopes (block order) and coupling
    /// rows as equalities. Infeasibility certificates refer to its rows.
    pub fn feasibility_lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(0);
        for block in &self.blocks {
            for &[lo, hi] in &block.bounds_x {
                lp.add_var(0.0, lo, hi);
            }
        }
        for row in self.coupling_rows().into_iter().zip(&self.coupling.rhs) {
            lp.add_eq(row.0, *row.1);
        }
        let xo = self.x_offsets();
        for (i, block) in self.blocks.iter().enumerate() {
            for ineq in &block.ineqs {
                lp.add_le(sparse(&ineq.coeffs, xo[i]), ineq.rhs);
            }
        }
        lp
    }

    /// Largest `|y - z|` over the reformulation copies.
    pub fn copy_mismatch(&self, x: &[f64], z: &[f64]) -> f64 {
        let xo = self.x_offsets();
        let zo = self.z_offsets();
        self.copies
            .iter()
            .map(|c| (x[xo[c.block] + c.x] - z[zo[c.block] + c.z]).abs())
            .fold(0.0, f64::max)
    }

    /// Parses an instance; integer coupling (`coupling_z`) is reformulated
    /// with the given or default penalty.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let problem = StructuredMicp {
            blocks: file.blocks,
            coupling: file.coupling,
            copies: file.copies,
        };
        match file.coupling_z {
            Some(cz) if !cz.triplets.is_empty() => reformulate_integer_coupling(
                &problem,
                &cz.triplets,
                file.penalty.unwrap_or(DEFAULT_PENALTY),
            ),
            _ => Ok(problem),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("instances serialize")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json_str(&text)
    }

    /// Validates and converts failures into an error.
    pub fn check(&self) -> Result<()> {
        let report = validate(self);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(
                report
                    .failures()
                    .map(|c| c.detail.clone())
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

pub struct IntegerPoints {
    lower: Vec<f64>,
    upper: Vec<f64>,
    current: Option<Vec<f64>>,
}

impl Iterator for IntegerPoints {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().expect("checked above");
        let mut k = cur.len();
        loop {
            if k == 0 {
                self.current = None;
                break;
            }
            k -= 1;
            if cur[k] < self.upper[k] {
                cur[k] += 1.0;
                break;
            }
            cur[k] = self.lower[k];
        }
        Some(out)
    }
}

/// Moves every integer variable that appears in `coupling_z` (triplets of
/// row, global integer column, value) into the continuous coupling through a
/// copy `y` with the same bounds and a penalty `penalty * |y - z|`.
pub fn reformulate_integer_coupling(
    problem: &StructuredMicp,
    coupling_z: &[(usize, usize, f64)],
    penalty: f64,
) -> Result<StructuredMicp> {
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "penalty must be positive and finite, got {penalty}"
        )));
    }
    let nz = problem.total_nz();
    let rows = problem.num_coupling_rows();
    for &(r, c, _) in coupling_z {
        if c >= nz || r >= rows {
            return Err(Error::InvalidInstance(format!(
                "integer coupling entry ({r}, {c}) out of range"
            )));
        }
    }
    let zo = problem.z_offsets();
    // Copies per block, in increasing local integer index.
    let mut coupled: Vec<Vec<usize>> = vec![Vec::new(); problem.num_blocks()];
    let mut cols: Vec<usize> = coupling_z.iter().map(|t| t.1).collect();
    cols.sort_unstable();
    cols.dedup();
    for c in cols {
        let (i, k) = locate(&zo, c);
        coupled[i].push(k);
    }
    if coupled.iter().all(Vec::is_empty) {
        return Ok(problem.clone());
    }

    let old_xo = problem.x_offsets();
    let new_xo = offsets(problem.blocks.iter().zip(&coupled).map(|(b, c)| b.nx + c.len()));
    let mut out = problem.clone();
    for (i, block) in out.blocks.iter_mut().enumerate() {
        let added = coupled[i].len();
        if added == 0 {
            continue;
        }
        let old_nx = block.nx;
        for ineq in &mut block.ineqs {
            ineq.coeffs.extend(std::iter::repeat(0.0).take(added));
        }
        for term in &mut block.terms {
            let v = match term {
                ObjectiveTerm::Affine { a, .. } => a,
                ObjectiveTerm::Power { q, .. } | ObjectiveTerm::AbsL1 { q, .. } => q,
            };
            let tail = v.split_off(old_nx);
            v.extend(std::iter::repeat(0.0).take(added));
            v.extend(tail);
        }
        block.nx += added;
        for (c, &k) in coupled[i].iter().enumerate() {
            block.bounds_x.push(block.bounds_z[k]);
            let mut q = vec![0.0; block.nx + block.nz];
            q[old_nx + c] = 1.0;
            q[block.nx + k] = -1.0;
            block.terms.push(ObjectiveTerm::AbsL1 { q, r: 0.0, w: penalty });
            out.copies.push(IntegerCopy {
                block: i,
                x: old_nx + c,
                z: k,
            });
        }
    }
    let remap = |col: usize| {
        let (i, l) = locate(&old_xo, col);
        new_xo[i] + l
    };
    out.coupling.triplets = problem
        .coupling
        .triplets
        .iter()
        .map(|&(r, c, v)| (r, remap(c), v))
        .collect();
    for &(r, c, v) in coupling_z {
        let (i, k) = locate(&zo, c);
        let pos = coupled[i].iter().position(|&kk| kk == k).expect("collected above");
        out.coupling
            .triplets
            .push((r, new_xo[i] + problem.blocks[i].nx + pos, v));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "pass" } else { "FAIL" };
            if c.detail.is_empty() {
                writeln!(f, "{tag} {}", c.name)?;
            } else {
                writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
            }
        }
        Ok(())
    }
}

/// Checks the standing assumptions: compact nonempty polytopes, compact
/// integer boxes, convex terms and consistent dimensions.
pub fn validate(problem: &StructuredMicp) -> ValidationReport {
    let mut report = ValidationReport::default();
    report.push(
        "blocks".into(),
        !problem.blocks.is_empty(),
        if problem.blocks.is_empty() { "no blocks".into() } else { String::new() },
    );
    for (i, block) in problem.blocks.iter().enumerate() {
        let dim = block.nx + block.nz;
        let mut dim_errors = Vec::new();
        if block.bounds_x.len() != block.nx {
            dim_errors.push(format!("{} continuous bounds for nx={}", block.bounds_x.len(), block.nx));
        }
        if block.bounds_z.len() != block.nz {
            dim_errors.push(format!("{} integer bounds for nz={}", block.bounds_z.len(), block.nz));
        }
        for (k, ineq) in block.ineqs.iter().enumerate() {
            if ineq.coeffs.len() != block.nx {
                dim_errors.push(format!("inequality {k} has {} coefficients", ineq.coeffs.len()));
            }
        }
        for (k, term) in block.terms.iter().enumerate() {
            if term.coeffs().len() != dim {
                dim_errors.push(format!("term {k} has {} coefficients, expected {dim}", term.coeffs().len()));
            }
        }
        let dims_ok = dim_errors.is_empty();
        report.push(format!("block {i} dimensions"), dims_ok, dim_errors.join("; "));

        let x_bounded = block.bounds_x.iter().all(|[lo, hi]| lo.is_finite() && hi.is_finite());
        report.push(
            format!("block {i} continuous bounds"),
            x_bounded,
            if x_bounded { String::new() } else { format!("block {i}: X_i not bounded") },
        );
        let z_compact = block.bounds_z.iter().all(|[lo, hi]| lo.is_finite() && hi.is_finite());
        let z_nonempty = block.bounds_z.iter().all(|[lo, hi]| lo.ceil() <= hi.floor());
        let detail = if !z_compact {
            format!("block {i}: Z_i not compact")
        } else if !z_nonempty {
            format!("block {i}: Z_i empty")
        } else {
            String::new()
        };
        report.push(format!("block {i} integer box"), z_compact && z_nonempty, detail);

        if dims_ok {
            let mut lp = LinearProgram::new(0);
            for &[lo, hi] in &block.bounds_x {
                lp.add_var(0.0, lo, hi);
            }
            for ineq in &block.ineqs {
                lp.add_le(sparse(&ineq.coeffs, 0), ineq.rhs);
            }
            let status = solve_lp(&lp).status;
            let nonempty = status == LpStatus::Optimal;
            report.push(
                format!("block {i} polytope"),
                nonempty,
                match status {
                    LpStatus::Optimal => String::new(),
                    LpStatus::Infeasible => format!("block {i}: X_i empty"),
                    _ => format!("block {i}: feasibility check failed ({status:?})"),
                },
            );
        }
        let bad_terms: Vec<String> = block
            .terms
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_convex())
            .map(|(k, _)| k.to_string())
            .collect();
        report.push(
            format!("block {i} convexity"),
            bad_terms.is_empty(),
            if bad_terms.is_empty() {
                String::new()
            } else {
                format!("block {i}: nonconvex terms {}", bad_terms.join(","))
            },
        );
    }
    let nx = problem.total_nx();
    let rows = problem.num_coupling_rows();
    let bad: Vec<String> = problem
        .coupling
        .triplets
        .iter()
        .filter(|(r, c, v)| *r >= rows || *c >= nx || !v.is_finite())
        .map(|(r, c, _)| format!("({r},{c})"))
        .collect();
    report.push(
        "coupling indices".into(),
        bad.is_empty(),
        if bad.is_empty() { String::new() } else { format!("entries out of range: {}", bad.join(" ")) },
    );
    report
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sparse(coeffs: &[f64], offset: usize) -> Vec<(usize, f64)> {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (offset + j, *v))
        .collect()
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().copied().unwrap_or(0) + s);
    }
    out
}

/// `(block, local index)` for a global index given prefix offsets.
fn locate(offsets: &[usize], col: usize) -> (usize, usize) {
    let i = offsets.partition_point(|&o| o <= col) - 1;
    (i, col - offsets[i])
}

mod bounds_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bounds: &[[f64; 2]], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<[Option<f64>; 2]> = bounds
            .iter()
            .map(|[lo, hi]| [lo.is_finite().then_some(*lo), hi.is_finite().then_some(*hi)])
            .collect();
        serde::Serialize::serialize(&out, s)
    }

    /// `null` or a missing entry is an infinite bound.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[f64; 2]>, D::Error> {
        let raw: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|pair| {
                if pair.len() > 2 {
                    return Err(serde::de::Error::custom("a bound is a [lo, hi] pair"));
                }
                let lo = pair.first().copied().flatten().unwrap_or(f64::NEG_INFINITY);
                let hi = pair.get(1).copied().flatten().unwrap_or(f64::INFINITY);
                Ok([lo, hi])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_block(nx: usize, nz: usize, terms: Vec<ObjectiveTerm>) -> BlockSpec {
        BlockSpec {
            nx,
            nz,
            bounds_x: vec![[-5.0, 5.0]; nx],
            bounds_z: vec![[0.0, 1.0]; nz],
            ineqs: vec![],
            terms,
        }
    }

    #[test]
    fn evaluates_each_term_kind() {
        let affine = one_block(1, 1, vec![ObjectiveTerm::Affine { a: vec![1.0, 0.0], c: 2.0 }]);
        assert_eq!(evaluate_objective(&affine, &[3.0], &[1.0]), 5.0);
        let power = one_block(1, 0, vec![ObjectiveTerm::Power { q: vec![1.0], r: 1.0, p: 2, w: 1.0 }]);
        assert_eq!(evaluate_objective(&power, &[3.0], &[]), 4.0);
        let abs = one_block(1, 1, vec![ObjectiveTerm::AbsL1 { q: vec![1.0, -1.0], r: 0.0, w: 10.0 }]);
        assert_eq!(evaluate_objective(&abs, &[0.5], &[1.0]), 5.0);
    }

    #[test]
    fn subgradients_of_each_kind() {
        let sq = one_block(1, 0, vec![ObjectiveTerm::Power { q: vec![1.0], r: 0.0, p: 2, w: 1.0 }]);
        assert_eq!(subgradient(&sq, &[3.0], &[]).0, vec![6.0]);
        let abs = one_block(1, 0, vec![ObjectiveTerm::AbsL1 { q: vec![1.0], r: 0.0, w: 1.0 }]);
        assert_eq!(subgradient(&abs, &[0.0], &[]).0, vec![0.0]);
        let quartic = one_block(1, 0, vec![ObjectiveTerm::Power { q: vec![1.0], r: 1.0, p: 4, w: 1.0 }]);
        assert_eq!(subgradient(&quartic, &[2.0], &[]).0, vec![4.0]);
    }

    #[test]
    #[should_panic(expected = "block expects")]
    fn dimension_mismatch_is_a_contract_violation() {
        let b = one_block(2, 0, vec![]);
        evaluate_objective(&b, &[1.0], &[]);
    }

    fn two_blocks_with_integer_coupling() -> (StructuredMicp, Vec<(usize, usize, f64)>) {
        let b1 = BlockSpec {
            nx: 1,
            nz: 0,
            bounds_x: vec![[0.0, 1.0]],
            bounds_z: vec![],
            ineqs: vec![],
            terms: vec![ObjectiveTerm::Affine { a: vec![1.0], c: 0.0 }],
        };
        let b2 = BlockSpec {
            nx: 0,
            nz: 1,
            bounds_x: vec![],
            bounds_z: vec![[0.0, 1.0]],
            ineqs: vec![],
            terms: vec![ObjectiveTerm::Affine { a: vec![2.0], c: 0.0 }],
        };
        let problem = StructuredMicp {
            blocks: vec![b1, b2],
            coupling: Coupling { triplets: vec![(0, 0, 1.0)], rhs: vec![1.0] },
            copies: vec![],
        };
        (problem, vec![(0, 0, 1.0)])
    }

    #[test]
    fn reformulation_adds_copy_and_penalty() {
        let (problem, cz) = two_blocks_with_integer_coupling();
        let out = reformulate_integer_coupling(&problem, &cz, 100.0).unwrap();
        let b2 = &out.blocks[1];
        assert_eq!((b2.nx, b2.nz), (1, 1));
        assert_eq!(b2.bounds_x, vec![[0.0, 1.0]]);
        assert_eq!(
            b2.terms.last().unwrap(),
            &ObjectiveTerm::AbsL1 { q: vec![1.0, -1.0], r: 0.0, w: 100.0 }
        );
        // Original affine term keeps its z coefficient behind the new copy.
        assert_eq!(b2.terms[0].coeffs(), &[0.0, 2.0]);
        let mut rows = out.coupling_rows();
        assert_eq!(rows.remove(0), vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(out.copies, vec![IntegerCopy { block: 1, x: 0, z: 0 }]);
    }

    #[test]
    fn reformulation_without_integer_coupling_is_identity() {
        let (problem, _) = two_blocks_with_integer_coupling();
        assert_eq!(reformulate_integer_coupling(&problem, &[], 1e4).unwrap(), problem);
    }

    #[test]
    fn reformulation_rejects_nonpositive_penalty() {
        let (problem, cz) = two_blocks_with_integer_coupling();
        assert!(matches!(
            reformulate_integer_coupling(&problem, &cz, 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn reformulation_keeps_later_block_columns_consistent() {
        // Copies in block 0 shift the continuous columns of block 1.
        let b0 = BlockSpec {
            nx: 1,
            nz: 2,
            bounds_x: vec![[0.0, 3.0]],
            bounds_z: vec![[0.0, 1.0], [0.0, 2.0]],
            ineqs: vec![LinearIneq { coeffs: vec![1.0], rhs: 2.0 }],
            terms: vec![],
        };
        let b1 = BlockSpec {
            nx: 1,
            nz: 0,
            bounds_x: vec![[0.0, 3.0]],
            bounds_z: vec![],
            ineqs: vec![],
            terms: vec![],
        };
        let problem = StructuredMicp {
            blocks: vec![b0, b1],
            coupling: Coupling { triplets: vec![(0, 1, 1.0)], rhs: vec![1.0] },
            copies: vec![],
        };
        let out = reformulate_integer_coupling(&problem, &[(0, 1, 2.0), (0, 0, 1.0)], 1e4).unwrap();
        assert_eq!(out.blocks[0].nx, 3);
        assert_eq!(out.blocks[0].ineqs[0].coeffs, vec![1.0, 0.0, 0.0]);
        assert_eq!(out.blocks[0].bounds_x[2], [0.0, 2.0]);
        assert_eq!(out.coupling_rows()[0], vec![(1, 1.0), (2, 2.0), (3, 1.0)]);
    }

    #[test]
    fn validation_flags_open_integer_box() {
        let text = r#"{"blocks":[{"nx":0,"nz":1,"bounds_x":[],"bounds_z":[[null]],"terms":[]}],
                      "coupling":{"triplets":[],"rhs":[]}}"#;
        let p = StructuredMicp::from_json_str(text).unwrap();
        let report = validate(&p);
        assert!(!report.passed());
        assert!(report.failures().any(|c| c.detail.contains("Z_i not compact")));
    }

    #[test]
    fn validation_flags_empty_polytope() {
        let text = r#"{"blocks":[{"nx":1,"nz":0,"bounds_x":[[-10,10]],"bounds_z":[],
                      "ineqs":[{"coeffs":[1],"rhs":-1},{"coeffs":[-1],"rhs":0}],"terms":[]}]}"#;
        let p = StructuredMicp::from_json_str(text).unwrap();
        assert!(validate(&p).failures().any(|c| c.detail.contains("X_i empty")));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (problem, cz) = two_blocks_with_integer_coupling();
        let mut p = reformulate_integer_coupling(&problem, &cz, 0.1 + 0.2).unwrap();
        p.blocks[0].bounds_x[0] = [f64::NEG_INFINITY, 1.0 / 3.0];
        let text = p.to_json_string();
        let back = StructuredMicp::from_json_str(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn integer_coupling_in_file_is_reformulated() {
        let text = r#"{"blocks":[{"nx":1,"nz":0,"bounds_x":[[0,1]],"bounds_z":[],"terms":[]},
                                 {"nx":0,"nz":1,"bounds_x":[],"bounds_z":[[0,1]],"terms":[]}],
                      "coupling":{"triplets":[[0,0,1]],"rhs":[1]},
                      "coupling_z":{"triplets":[[0,0,1]]},"penalty":100}"#;
        let p = StructuredMicp::from_json_str(text).unwrap();
        assert_eq!(p.blocks[1].nx, 1);
        assert_eq!(p.copies.len(), 1);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = StructuredMicp::from_json_str("{\n  \"blocks\": [\n    {\"nx\": \"two\"}\n  ]\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn integer_points_enumerate_the_box() {
        let b = BlockSpec {
            nx: 0,
            nz: 2,
            bounds_x: vec![],
            bounds_z: vec![[0.0, 1.0], [-1.0, 1.0]],
            ineqs: vec![],
            terms: vec![],
        };
        let p = StructuredMicp { blocks: vec![b], coupling: Coupling::default(), copies: vec![] };
        let pts: Vec<_> = p.integer_points().collect();
        assert_eq!(pts.len(), 6);
        assert_eq!(p.num_integer_points(), 6);
        assert_eq!(pts[0], vec![0.0, -1.0]);
        assert_eq!(pts[5], vec![1.0, 1.0]);
    }

    fn term_strategy() -> impl Strategy<Value = ObjectiveTerm> {
        let q = prop::collection::vec(-3.0f64..3.0, 3);
        prop_oneof![
            (q.clone(), -2.0f64..2.0).prop_map(|(a, c)| ObjectiveTerm::Affine { a, c }),
            (q.clone(), -2.0f64..2.0, prop_oneof![Just(2u32), Just(4u32)], 0.0f64..3.0)
                .prop_map(|(q, r, p, w)| ObjectiveTerm::Power { q, r, p, w }),
            (q, -2.0f64..2.0, 0.0f64..3.0).prop_map(|(q, r, w)| ObjectiveTerm::AbsL1 { q, r, w }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn subgradient_inequality_holds(
            terms in prop::collection::vec(term_strategy(), 1..4),
            v in prop::collection::vec(-2.0f64..2.0, 3),
            w in prop::collection::vec(-2.0f64..2.0, 3),
            kink in any::<bool>(),
        ) {
            let block = BlockSpec {
                nx: 2, nz: 1,
                bounds_x: vec![[-2.0, 2.0]; 2],
                bounds_z: vec![[-2.0, 2.0]],
                ineqs: vec![],
                terms: terms.clone(),
            };
            // Optionally move v onto the kink of the first term.
            let mut v = v;
            if kink {
                if let ObjectiveTerm::AbsL1 { q, r, .. } | ObjectiveTerm::Power { q, r, .. } = &terms[0] {
                    if q[0].abs() > 0.1 {
                        v[0] += (r - dot(q, &v)) / q[0];
                    }
                }
            }
            let f_v = block.evaluate(&v[..2], &v[2..]);
            let f_w = block.evaluate(&w[..2], &w[2..]);
            let (gx, gz) = block.subgradient(&v[..2], &v[2..]);
            let g: Vec<f64> = gx.into_iter().chain(gz).collect();
            let lin = f_v + g.iter().zip(w.iter().zip(&v)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
            prop_assert!(f_w >= lin - 1e-9 * (1.0 + f_w.abs()), "{} < {}", f_w, lin);
        }

        #[test]
        fn objective_is_additive(
            t1 in prop::collection::vec(term_strategy(), 1..3),
            t2 in prop::collection::vec(term_strategy(), 1..3),
            v in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let mk = |terms: Vec<ObjectiveTerm>| BlockSpec {
                nx: 2, nz: 1, bounds_x: vec![[-2.0, 2.0]; 2], bounds_z: vec![[-2.0, 2.0]],
                ineqs: vec![], terms,
            };
            let both: Vec<_> = t1.iter().chain(&t2).cloned().collect();
            let sum = mk(t1).evaluate(&v[..2], &v[2..]) + mk(t2).evaluate(&v[..2], &v[2..]);
            prop_assert!((mk(both).evaluate(&v[..2], &v[2..]) - sum).abs() <= 1e-9 * (1.0 + sum.abs()));
        }
    }
}
