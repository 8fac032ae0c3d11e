//! Sparse LU factorization of a simplex basis with product-form updates.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Basis column that turned out to be linearly dependent on the ones before it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Singular {
    /// Position in the basis whose column has no usable pivot.
    pub position: usize,
    /// A row that received no pivot so far; its slack repairs the basis.
    pub free_row: usize,
}

struct Eta {
    pos: usize,
    pivot: f64,
    /// Off-pivot nonzeros of the entering column.
    entries: Vec<(usize, f64)>,
}

/// Left-looking LU: the k-th eliminated column is basis position `cols[k]`
/// with pivot row `rows[k]`. Applying the elimination steps `L_0, L_1, ...`
/// to that column leaves `U[.][k]` on the pivot rows of steps `0..=k`.
/// Pivots applied since the factorization are kept as eta matrices.
pub(crate) struct BasisFactor {
    m: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Multipliers of step k, by original row.
    lower: Packed,
    /// Off-diagonal entries of U column k, by step index.
    upper: Packed,
    diag: Vec<f64>,
    etas: Vec<Eta>,
}

/// Sparse vectors stored back to back.
struct Packed {
    start: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl Packed {
    fn with_capacity(m: usize) -> Self {
        let mut start = Vec::with_capacity(m + 1);
        start.push(0);
        Packed {
            start,
            entries: Vec::with_capacity(4 * m),
        }
    }

    fn get(&self, k: usize) -> &[(usize, f64)] {
        &self.entries[self.start[k]..self.start[k + 1]]
    }

    fn close(&mut self) {
        self.start.push(self.entries.len());
    }
}

const SINGULAR_TOL: f64 = 1e-11;
/// Candidate pivots must reach this fraction of the largest entry.
const PIVOT_THRESHOLD: f64 = 0.1;

impl BasisFactor {
    /// Factorizes the basis whose k-th column is written by `fill(k, out)`.
    #[cfg(test)]
    pub fn factorize<F>(m: usize, mut fill: F) -> Result<Self, Singular>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let mut dense = vec![0.0; m];
        let columns = (0..m)
            .map(|k| {
                dense.iter_mut().for_each(|v| *v = 0.0);
                fill(k, &mut dense);
                dense
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .collect()
            })
            .collect::<Vec<Vec<(usize, f64)>>>();
        Self::factorize_sparse::<Vec<(usize, f64)>>(m, &columns)
    }

    /// Factorizes the basis whose k-th column has the nonzeros `columns[k]`,
    /// listed by increasing row.
    pub fn factorize_sparse<C: AsRef<[(usize, f64)]>>(m: usize, columns: &[C]) -> Result<Self, Singular> {
        let columns: Vec<&[(usize, f64)]> = columns.iter().map(AsRef::as_ref).collect();
        let mut row_count = vec![0usize; m];
        for col in &columns {
            for &(i, _) in *col {
                row_count[i] += 1;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&k| columns[k].len());

        let mut pivoted = vec![false; m];
        let mut step_of_row = vec![usize::MAX; m];
        let mut f = Self {
            m,
            rows: Vec::with_capacity(m),
            cols: Vec::with_capacity(m),
            lower: Packed::with_capacity(m),
            upper: Packed::with_capacity(m),
            diag: Vec::with_capacity(m),
            etas: Vec::new(),
        };
        let mut x = vec![0.0; m];
        // Rows where `x` may be nonzero.
        let mut pattern: Vec<usize> = Vec::with_capacity(m);
        let mut marked = vec![false; m];
        let mut steps: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        for (k, &q) in order.iter().enumerate() {
            for &(i, v) in columns[q] {
                x[i] = v;
                marked[i] = true;
                pattern.push(i);
            }
            // Earlier steps touching the column, applied in step order; a
            // step only fills rows that are pivoted later, if at all.
            steps.extend(pattern.iter().filter(|&&i| pivoted[i]).map(|&i| Reverse(step_of_row[i])));
            while let Some(Reverse(j)) = steps.pop() {
                let xr = x[f.rows[j]];
                if xr == 0.0 {
                    continue;
                }
                f.upper.entries.push((j, xr));
                for &(i, l) in f.lower.get(j) {
                    x[i] -= l * xr;
                    if !marked[i] {
                        marked[i] = true;
                        pattern.push(i);
                        if pivoted[i] {
                            steps.push(Reverse(step_of_row[i]));
                        }
                    }
                }
            }
            let mut max = 0.0f64;
            for &i in &pattern {
                if !pivoted[i] {
                    max = max.max(x[i].abs());
                }
            }
            if max < SINGULAR_TOL {
                let free_row = (0..m).find(|&i| !pivoted[i]).expect("fewer pivots than rows");
                return Err(Singular { position: q, free_row });
            }
            pattern.sort_unstable();
            let mut pivot = usize::MAX;
            for &i in &pattern {
                if !pivoted[i]
                    && x[i].abs() >= PIVOT_THRESHOLD * max
                    && (pivot == usize::MAX || row_count[i] < row_count[pivot])
                {
                    pivot = i;
                }
            }
            let d = x[pivot];
            for &i in &pattern {
                if !pivoted[i] && i != pivot && x[i] != 0.0 {
                    f.lower.entries.push((i, x[i] / d));
                }
            }
            pivoted[pivot] = true;
            step_of_row[pivot] = k;
            f.rows.push(pivot);
            f.cols.push(q);
            f.lower.close();
            f.upper.close();
            f.diag.push(d);
            for &i in &pattern {
                x[i] = 0.0;
                marked[i] = false;
            }
            pattern.clear();
        }
        Ok(f)
    }

    pub fn num_updates(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B x = a` in place.
    pub fn ftran(&self, a: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let ar = a[self.rows[k]];
            if ar != 0.0 {
                for &(i, l) in self.lower.get(k) {
                    a[i] -= l * ar;
                }
            }
        }
        let mut b: Vec<f64> = self.rows.iter().map(|&r| a[r]).collect();
        let mut y = vec![0.0; m];
        for k in (0..m).rev() {
            let yk = b[k] / self.diag[k];
            y[self.cols[k]] = yk;
            if yk != 0.0 {
                for &(j, u) in self.upper.get(k) {
                    b[j] -= u * yk;
                }
            }
        }
        for eta in &self.etas {
            let r = eta.pos;
            let vr = y[r] / eta.pivot;
            if vr != 0.0 {
                for &(i, w) in &eta.entries {
                    y[i] -= w * vr;
                }
            }
            y[r] = vr;
        }
        a.copy_from_slice(&y);
    }

    /// Solves `B^T y = c` in place.
    pub fn btran(&self, c: &mut [f64]) {
        let m = self.m;
        for eta in self.etas.iter().rev() {
            let r = eta.pos;
            let mut s = c[r];
            for &(i, w) in &eta.entries {
                s -= w * c[i];
            }
            c[r] = s / eta.pivot;
        }
        // U^T v = c permuted to step order.
        let mut v = vec![0.0; m];
        for k in 0..m {
            let mut s = c[self.cols[k]];
            for &(j, u) in self.upper.get(k) {
                s -= u * v[j];
            }
            v[k] = s / self.diag[k];
        }
        // y = L_0^T ... L_{m-1}^T applied to v placed on the pivot rows.
        let mut g = vec![0.0; m];
        for k in 0..m {
            g[self.rows[k]] = v[k];
        }
        for k in (0..m).rev() {
            let mut s = 0.0;
            for &(i, l) in self.lower.get(k) {
                s += l * g[i];
            }
            g[self.rows[k]] -= s;
        }
        c.copy_from_slice(&g);
    }

    /// Records the replacement of basis position `pos`; `w` is the FTRAN'd
    /// entering column.
    pub fn update(&mut self, pos: usize, w: &[f64]) {
        self.etas.push(Eta {
            pos,
            pivot: w[pos],
            entries: w
                .iter()
                .enumerate()
                .filter(|&(i, v)| i != pos && *v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        });
    }
}
