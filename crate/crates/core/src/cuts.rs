//! Affine underestimators of the block objectives and the pool that turns
//! them into a piecewise-affine lower model.
//!
//! The pool is organised in *slots*. With [`CutGranularity::Block`] each block
//! has one slot and every cut underestimates the whole `f_i`; the model is
//! `sum_i max_c cut_c(x_i, z_i)`. With [`CutGranularity::Term`] each objective
//! term has its own slot: affine terms are carried exactly, `AbsL1` terms are
//! seeded with both of their linear pieces, and power terms collect tangents.
//! The term-wise model is never weaker than the block-wise one built from the
//! same points.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_z::FixedZSolution;
use crate::model::{dot, ObjectiveTerm, StructuredMicp};

/// Tolerance of the activity test in [`CutPool::prune`].
pub const PRUNE_TOL: f64 = 1e-6;
/// Pools larger than this are pruned before every master solve.
pub const MAX_CUTS: usize = 10_000;
const DEDUP_SCALE: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutOrigin {
    /// Exact linear piece of an `AbsL1` term.
    Exact,
    /// Produced by a fixed-integer solve of the outer loop.
    OuterIter,
    /// Produced inside a block subproblem.
    InnerBlock,
}

/// `alpha^T x_i + beta^T z_i + gamma <= f` for the function of its slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub block: usize,
    pub slot: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub origin: CutOrigin,
}

impl Cut {
    pub fn value(&self, x: &[f64], z: &[f64]) -> f64 {
        dot(&self.alpha, x) + dot(&self.beta, z) + self.gamma
    }

    fn key(&self) -> Vec<u64> {
        let mut key = vec![self.block as u64, self.slot as u64];
        key.extend(
            self.alpha
                .iter()
                .chain(&self.beta)
                .chain(std::iter::once(&self.gamma))
                .map(|v| ((v * DEDUP_SCALE).round() + 0.0).to_bits()),
        );
        key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CutGranularity {
    Block,
    #[default]
    Term,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotKind {
    /// Affine term represented exactly; holds no cuts.
    Affine,
    /// Piecewise-linear term represented exactly by its seeded pieces.
    Exact,
    /// Approximated by accumulated cuts.
    Cuts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub kind: SlotKind,
    /// `(a, c)` of an affine slot, over the block's `(x_i, z_i)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<(Vec<f64>, f64)>,
    pub cuts: Vec<Cut>,
}

impl Slot {
    fn max_value(&self, x: &[f64], z: &[f64]) -> Option<f64> {
        if let Some((a, c)) = &self.affine {
            let v: Vec<f64> = x.iter().chain(z).copied().collect();
            return Some(dot(a, &v) + c);
        }
        self.cuts
            .iter()
            .map(|c| c.value(x, z))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    pub granularity: CutGranularity,
    /// `slots[i][s]`
    pub slots: Vec<Vec<Slot>>,
    nx: Vec<usize>,
    nz: Vec<usize>,
    #[serde(skip)]
    seen: HashSet<Vec<u64>>,
}

impl CutPool {
    pub fn new(problem: &StructuredMicp, granularity: CutGranularity) -> Self {
        let mut pool = CutPool {
            granularity,
            slots: Vec::new(),
            nx: problem.blocks.iter().map(|b| b.nx).collect(),
            nz: problem.blocks.iter().map(|b| b.nz).collect(),
            seen: HashSet::new(),
        };
        for (i, block) in problem.blocks.iter().enumerate() {
            let slots = match granularity {
                CutGranularity::Block => vec![Slot {
                    kind: SlotKind::Cuts,
                    affine: None,
                    cuts: Vec::new(),
                }],
                CutGranularity::Term => block
                    .terms
                    .iter()
                    .map(|t| match t {
                        ObjectiveTerm::Affine { a, c } => Slot {
                            kind: SlotKind::Affine,
                            affine: Some((a.clone(), *c)),
                            cuts: Vec::new(),
                        },
                        ObjectiveTerm::AbsL1 { .. } => Slot {
                            kind: SlotKind::Exact,
                            affine: None,
                            cuts: Vec::new(),
                        },
                        ObjectiveTerm::Power { .. } => Slot {
                            kind: SlotKind::Cuts,
                            affine: None,
                            cuts: Vec::new(),
                        },
                    })
                    .collect(),
            };
            pool.slots.push(slots);
            if granularity == CutGranularity::Term {
                for (s, term) in block.terms.iter().enumerate() {
                    for cut in exact_pieces(i, s, block.nx, term) {
                        pool.add(cut);
                    }
                }
            }
        }
        pool
    }

    pub fn num_blocks(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().flatten().map(|s| s.cuts.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cuts that are not exact pieces; the quantity bounded by pool growth.
    pub fn num_approximating_cuts(&self) -> usize {
        self.cuts().filter(|c| c.origin != CutOrigin::Exact).count()
    }

    pub fn block_len(&self, block: usize) -> usize {
        self.slots[block].iter().map(|s| s.cuts.len()).sum()
    }

    pub fn cuts(&self) -> impl Iterator<Item = &Cut> {
        self.slots.iter().flatten().flat_map(|s| s.cuts.iter())
    }

    /// Adds a cut unless an identical one (after rounding) is present.
    pub fn add(&mut self, cut: Cut) -> bool {
        assert!(
            cut.alpha.len() == self.nx[cut.block] && cut.beta.len() == self.nz[cut.block],
            "cut dimensions do not match block {}",
            cut.block
        );
        if self.slots[cut.block][cut.slot].kind == SlotKind::Affine {
            return false;
        }
        if !self.seen.insert(cut.key()) {
            return false;
        }
        self.slots[cut.block][cut.slot].cuts.push(cut);
        true
    }

    /// Adds cuts in the given order; returns how many were new.
    pub fn extend(&mut self, cuts: impl IntoIterator<Item = Cut>) -> usize {
        cuts.into_iter().map(|c| self.add(c) as usize).sum()
    }

    /// Slot-wise model values of block `i` at `(x_i, z_i)`.
    pub fn slot_values(&self, block: usize, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.slots[block]
            .iter()
            .enumerate()
            .map(|(s, slot)| {
                slot.max_value(x, z).ok_or_else(|| {
                    Error::InvalidParameter(format!("block {block} slot {s} has no cuts; model undefined"))
                })
            })
            .collect()
    }

    /// `sum_i model_i(x_i, z_i)` over global vectors.
    pub fn eval_model(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        let (mut xo, mut zo) = (0, 0);
        for i in 0..self.num_blocks() {
            let xi = &x[xo..xo + self.nx[i]];
            let zi = &z[zo..zo + self.nz[i]];
            total += self.slot_values(i, xi, zi)?.iter().sum::<f64>();
            xo += self.nx[i];
            zo += self.nz[i];
        }
        Ok(total)
    }

    /// Keeps the cuts within [`PRUNE_TOL`] of `eta[i][s]` at `(x, z)`, and at
    /// least the largest cut of every slot. Exact pieces are always kept.
    pub fn prune(&self, x: &[f64], z: &[f64], eta: &[Vec<f64>]) -> CutPool {
        let mut out = CutPool {
            granularity: self.granularity,
            slots: Vec::with_capacity(self.slots.len()),
            nx: self.nx.clone(),
            nz: self.nz.clone(),
            seen: HashSet::new(),
        };
        let (mut xo, mut zo) = (0, 0);
        for (i, slots) in self.slots.iter().enumerate() {
            let xi = &x[xo..xo + self.nx[i]];
            let zi = &z[zo..zo + self.nz[i]];
            let mut kept_slots = Vec::with_capacity(slots.len());
            for (s, slot) in slots.iter().enumerate() {
                let values: Vec<f64> = slot.cuts.iter().map(|c| c.value(xi, zi)).collect();
                let best = values
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k);
                let cuts = slot
                    .cuts
                    .iter()
                    .zip(&values)
                    .enumerate()
                    .filter(|(k, (c, v))| {
                        c.origin == CutOrigin::Exact || eta[i][s] - **v <= PRUNE_TOL || Some(*k) == best
                    })
                    .map(|(_, (c, _))| c.clone())
                    .collect();
                kept_slots.push(Slot {
                    kind: slot.kind,
                    affine: slot.affine.clone(),
                    cuts,
                });
            }
            out.slots.push(kept_slots);
            xo += self.nx[i];
            zo += self.nz[i];
        }
        out.rebuild_index();
        out
    }

    fn rebuild_index(&mut self) {
        self.seen = self.cuts().map(Cut::key).collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut pool: CutPool = serde_json::from_str(text)?;
        pool.rebuild_index();
        Ok(pool)
    }
}

/// The two linear pieces of an `AbsL1` term; empty for other kinds.
fn exact_pieces(block: usize, slot: usize, nx: usize, term: &ObjectiveTerm) -> Vec<Cut> {
    let ObjectiveTerm::AbsL1 { q, r, w } = term else {
        return Vec::new();
    };
    [1.0, -1.0]
        .into_iter()
        .map(|sign| {
            let g: Vec<f64> = q.iter().map(|v| sign * w * v).collect();
            Cut {
                block,
                slot,
                alpha: g[..nx].to_vec(),
                beta: g[nx..].to_vec(),
                gamma: -sign * w * r,
                origin: CutOrigin::Exact,
            }
        })
        .collect()
}

/// One cut per block with `alpha = lambda_i`, `beta = mu_i` and `gamma` such
/// that the cut equals the block's model value at `(x*, z)`. Each is a convex
/// combination of supporting hyperplanes of the block's terms, hence valid
/// everywhere, and together they reproduce the model value of the solve.
pub fn make_cuts(problem: &StructuredMicp, sol: &FixedZSolution, origin: CutOrigin) -> Vec<Cut> {
    let mut out = Vec::with_capacity(problem.num_blocks());
    for (i, block) in problem.blocks.iter().enumerate() {
        let mut alpha = vec![0.0; block.nx];
        let mut beta = vec![0.0; block.nz];
        let mut gamma = 0.0;
        for term in &block.terms {
            if let ObjectiveTerm::Affine { a, c } = term {
                add_into(&mut alpha, &a[..block.nx]);
                add_into(&mut beta, &a[block.nx..]);
                gamma += c;
            }
        }
        for tc in sol.term_cuts.iter().filter(|c| c.block == i) {
            add_into(&mut alpha, &tc.alpha);
            add_into(&mut beta, &tc.beta);
            gamma += tc.gamma;
        }
        out.push(Cut {
            block: i,
            slot: 0,
            alpha,
            beta,
            gamma,
            origin,
        });
    }
    out
}

/// The cuts a fixed-integer solve contributes to a pool of the given
/// granularity: block cuts, or the aggregated term cuts plus the active
/// tangents of every approximated term.
pub fn cuts_for_pool(
    problem: &StructuredMicp,
    sol: &FixedZSolution,
    granularity: CutGranularity,
    origin: CutOrigin,
) -> Vec<Cut> {
    match granularity {
        CutGranularity::Block => make_cuts(problem, sol, origin),
        CutGranularity::Term => {
            let approximated = |c: &Cut| {
                matches!(problem.blocks[c.block].terms[c.slot], ObjectiveTerm::Power { .. })
            };
            sol.term_cuts
                .iter()
                .chain(&sol.active_tangents)
                .filter(|c| approximated(c))
                .map(|c| Cut { origin, ..c.clone() })
                .collect()
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockSpec, Coupling};

    fn parabola_problem() -> StructuredMicp {
        StructuredMicp {
            blocks: vec![BlockSpec {
                nx: 1,
                nz: 0,
                bounds_x: vec![[-2.0, 2.0]],
                bounds_z: vec![],
                ineqs: vec![],
                terms: vec![ObjectiveTerm::Power { q: vec![1.0], r: 0.0, p: 2, w: 1.0 }],
            }],
            coupling: Coupling::default(),
            copies: vec![],
        }
    }

    fn line(alpha: f64, gamma: f64) -> Cut {
        Cut {
            block: 0,
            slot: 0,
            alpha: vec![alpha],
            beta: vec![],
            gamma,
            origin: CutOrigin::OuterIter,
        }
    }

    #[test]
    fn model_is_max_of_lines() {
        let mut pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        pool.add(line(2.0, -1.0));
        pool.add(line(0.0, 0.0));
        assert_eq!(pool.eval_model(&[0.2], &[]).unwrap(), 0.0);
    }

    #[test]
    fn model_sums_constant_cuts_over_blocks() {
        let mut problem = parabola_problem();
        problem.blocks = vec![problem.blocks[0].clone(); 3];
        let mut pool = CutPool::new(&problem, CutGranularity::Block);
        for i in 0..3 {
            pool.add(Cut { block: i, ..line(0.0, 1.0) });
        }
        assert_eq!(pool.eval_model(&[0.0; 3], &[]).unwrap(), 3.0);
    }

    #[test]
    fn empty_slot_is_reported() {
        let pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        assert!(pool.eval_model(&[0.0], &[]).is_err());
    }

    #[test]
    fn duplicates_are_dropped() {
        let mut pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        assert!(pool.add(line(2.0, -1.0)));
        assert!(!pool.add(line(2.0 + 1e-12, -1.0)));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn prune_keeps_ties() {
        let mut pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        pool.add(line(2.0, -1.0));
        pool.add(line(0.0, 0.0));
        assert_eq!(pool.prune(&[0.5], &[], &[vec![0.0]]).len(), 2);
    }

    #[test]
    fn prune_drops_inactive() {
        let mut pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        pool.add(line(2.0, -1.0));
        pool.add(line(0.0, 0.0));
        let pruned = pool.prune(&[1.0], &[], &[vec![1.0]]);
        assert_eq!(pruned.len(), 1);
        assert_eq!(pruned.slots[0][0].cuts[0].alpha, vec![2.0]);
        // The dedup index follows the pruned contents.
        let mut pruned = pruned;
        assert!(pruned.add(line(0.0, 0.0)));
    }

    #[test]
    fn term_pool_seeds_abs_pieces_and_keeps_affine_exact() {
        let problem = StructuredMicp {
            blocks: vec![BlockSpec {
                nx: 1,
                nz: 1,
                bounds_x: vec![[0.0, 1.0]],
                bounds_z: vec![[0.0, 1.0]],
                ineqs: vec![],
                terms: vec![
                    ObjectiveTerm::Affine { a: vec![3.0, 1.0], c: 1.0 },
                    ObjectiveTerm::AbsL1 { q: vec![1.0, -1.0], r: 0.0, w: 10.0 },
                ],
            }],
            coupling: Coupling::default(),
            copies: vec![],
        };
        let pool = CutPool::new(&problem, CutGranularity::Term);
        assert_eq!(pool.len(), 2);
        for (x, z) in [(0.0, 0.0), (0.5, 1.0), (1.0, 0.0), (0.3, 1.0)] {
            let exact = problem.evaluate(&[x], &[z]);
            assert!((pool.eval_model(&[x], &[z]).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn json_dump_round_trips() {
        let mut pool = CutPool::new(&parabola_problem(), CutGranularity::Block);
        pool.add(line(2.0, -1.0));
        let back = CutPool::from_json(&pool.to_json()).unwrap();
        assert_eq!(back.slots, pool.slots);
        let mut back = back;
        assert!(!back.add(line(2.0, -1.0)));
    }
}
