//! Seeded random instances and a few small fixed ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BlockSpec, Coupling, LinearIneq, ObjectiveTerm, StructuredMicp};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomSpec {
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub max_nx: usize,
    /// Binaries per block are drawn from `0..=max_nz`; at least one overall.
    pub max_nz: usize,
    pub max_terms: usize,
    /// Coupling rows; zero gives a decoupled instance.
    pub max_rows: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            min_blocks: 2,
            max_blocks: 3,
            max_nx: 2,
            max_nz: 2,
            max_terms: 3,
            max_rows: 2,
        }
    }
}

impl RandomSpec {
    pub fn decoupled() -> Self {
        Self {
            max_rows: 0,
            ..Self::default()
        }
    }
}

/// A feasible instance with binary integers and terms drawn from affine,
/// squared and absolute-value kinds. Coupling right-hand sides are generated
/// from a random interior point, so `A x = b` always has a solution in `X`.
pub fn random_instance(seed: u64, spec: &RandomSpec) -> StructuredMicp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blocks = rng.gen_range(spec.min_blocks..=spec.max_blocks);
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut anchor = Vec::new();
    for _ in 0..n_blocks {
        let nx = rng.gen_range(1..=spec.max_nx.max(1));
        let nz = rng.gen_range(0..=spec.max_nz);
        let mut bounds_x = Vec::with_capacity(nx);
        let mut point = Vec::with_capacity(nx);
        for _ in 0..nx {
            let lo = round2(rng.gen_range(-2.0..0.0));
            let hi = round2(lo + rng.gen_range(0.5..3.0));
            point.push(round2(rng.gen_range(lo..hi)));
            bounds_x.push([lo, hi]);
        }
        let mut ineqs = Vec::new();
        if nx == 2 && rng.gen_bool(0.5) {
            let coeffs = vec![round2(rng.gen_range(-1.0..1.0)), round2(rng.gen_range(-1.0..1.0))];
            let rhs = round2(coeffs[0] * point[0] + coeffs[1] * point[1] + rng.gen_range(0.1..1.0));
            ineqs.push(LinearIneq { coeffs, rhs });
        }
        let dim = nx + nz;
        let n_terms = rng.gen_range(1..=spec.max_terms.max(1));
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let q: Vec<f64> = (0..dim).map(|_| round2(rng.gen_range(-2.0..2.0))).collect();
            let r = round2(rng.gen_range(-1.0..1.0));
            let w = round2(rng.gen_range(0.1..2.0));
            terms.push(match rng.gen_range(0..3) {
                0 => ObjectiveTerm::Affine { a: q, c: r },
                1 => ObjectiveTerm::Power { q, r, p: 2, w },
                _ => ObjectiveTerm::AbsL1 { q, r, w },
            });
        }
        blocks.push(BlockSpec {
            nx,
            nz,
            bounds_x,
            bounds_z: vec![[0.0, 1.0]; nz],
            ineqs,
            terms,
        });
        anchor.extend(point);
    }
    if blocks.iter().all(|b| b.nz == 0) {
        let b = &mut blocks[0];
        b.nz = 1;
        b.bounds_z.push([0.0, 1.0]);
        for t in &mut b.terms {
            match t {
                ObjectiveTerm::Affine { a, .. } => a.push(1.0),
                ObjectiveTerm::Power { q, .. } | ObjectiveTerm::AbsL1 { q, .. } => q.push(1.0),
            }
        }
    }
    let total_nx = anchor.len();
    let rows = if spec.max_rows == 0 { 0 } else { rng.gen_range(1..=spec.max_rows) };
    let mut coupling = Coupling::default();
    for r in 0..rows {
        let mut rhs = 0.0;
        for (c, x) in anchor.iter().enumerate() {
            let v = round2(rng.gen_range(-1.0..1.0));
            if v != 0.0 {
                coupling.triplets.push((r, c, v));
                rhs += v * x;
            }
        }
        coupling.rhs.push(rhs);
    }
    debug_assert_eq!(total_nx, blocks.iter().map(|b| b.nx).sum::<usize>());
    StructuredMicp {
        blocks,
        coupling,
        copies: vec![],
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Two blocks with `f_i = (x_i - z_i)^2 + z_i`, `x_i in [0, 2]`, binary
/// `z_i` and `x_1 + x_2 = 1`. The optimum is 0.5 at `z = (0, 0)`,
/// `x = (0.5, 0.5)`.
pub fn tiny() -> StructuredMicp {
    let block = BlockSpec {
        nx: 1,
        nz: 1,
        bounds_x: vec![[0.0, 2.0]],
        bounds_z: vec![[0.0, 1.0]],
        ineqs: vec![],
        terms: vec![
            ObjectiveTerm::Power {
                q: vec![1.0, -1.0],
                r: 0.0,
                p: 2,
                w: 1.0,
            },
            ObjectiveTerm::Affine {
                a: vec![0.0, 1.0],
                c: 0.0,
            },
        ],
    };
    StructuredMicp {
        blocks: vec![block.clone(), block],
        coupling: Coupling {
            triplets: vec![(0, 0, 1.0), (0, 1, 1.0)],
            rhs: vec![1.0],
        },
        copies: vec![],
    }
}
