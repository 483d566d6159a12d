//! Row-distributed compressed sparse row matrix over global node ids.

use crate::error::{Error, Result};
use crate::nodes::RankMesh;
use crate::partition::{FixedScale, RankContext};

/// Rows are this rank's owned nodes in id order; columns are global ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub row_ids: Vec<u64>,
    pub offsets: Vec<usize>,
    pub cols: Vec<u64>,
    vals: Vec<f64>,
    pub global_n: u64,
}

impl CsrMatrix {
    /// Sum duplicate `(row, col)` entries and build the rows. Sums are taken
    /// in fixed point against a global magnitude bound, so the values do
    /// not depend on the order in which triples arrive.
    pub fn from_triples(
        ctx: &RankContext,
        row_ids: Vec<u64>,
        global_n: u64,
        mut triples: Vec<(u64, u64, f64)>,
    ) -> Result<CsrMatrix> {
        let local_max = triples.iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
        let bound = ctx.max_f64(local_max)?;
        if !bound.is_finite() {
            return Err(Error::Solver("non-finite matrix entry".into()));
        }
        // leave room for many duplicates
        let scale = FixedScale::for_bound(bound * 1024.0);
        triples.sort_unstable_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; row_ids.len() + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut i = 0;
        let mut row_pos = 0;
        while i < triples.len() {
            let (r, c) = (triples[i].0, triples[i].1);
            let mut acc = 0i128;
            while i < triples.len() && triples[i].0 == r && triples[i].1 == c {
                acc += scale.to_fixed(triples[i].2);
                i += 1;
            }
            while row_pos < row_ids.len() && row_ids[row_pos] < r {
                row_pos += 1;
                offsets[row_pos] = cols.len();
            }
            if row_pos == row_ids.len() || row_ids[row_pos] != r {
                return Err(Error::Contract(format!("received row {r}, which this rank does not own")));
            }
            cols.push(c);
            vals.push(scale.from_fixed(acc));
        }
        while row_pos < row_ids.len() {
            row_pos += 1;
            offsets[row_pos] = cols.len();
        }
        Ok(CsrMatrix {
            row_ids,
            offsets,
            cols,
            vals,
            global_n,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u64], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Diagonal entries of the owned rows.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.row_ids.len())
            .map(|i| {
                let (c, v) = self.row(i);
                c.binary_search(&self.row_ids[i]).map_or(0.0, |k| v[k])
            })
            .collect()
    }

    /// `y = A x` for owned vectors. The input is gathered whole on every
    /// rank first; rows are then independent.
    pub fn apply(&self, ctx: &RankContext, mesh: &RankMesh, x: &[f64]) -> Result<Vec<f64>> {
        let full = mesh.gather_by_id(ctx, x)?;
        Ok(self.apply_global(&full))
    }

    /// `y = A x` with `x` indexed by global id.
    pub fn apply_global(&self, x: &[f64]) -> Vec<f64> {
        (0..self.row_ids.len())
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j as usize]).sum()
            })
            .collect()
    }

    /// Every entry of every rank as `(row, col, value)`, sorted.
    pub fn gather_triples(&self, ctx: &RankContext) -> Result<Vec<(u64, u64, f64)>> {
        let mut mine = Vec::with_capacity(self.nnz());
        for i in 0..self.row_ids.len() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                mine.push((self.row_ids[i], j, a));
            }
        }
        let mut all: Vec<_> = ctx.all_gather(mine)?.into_iter().flatten().collect();
        all.sort_unstable_by_key(|t| (t.0, t.1));
        Ok(all)
    }

    /// Exact transpose equality.
    pub fn is_symmetric(&self, ctx: &RankContext) -> Result<bool> {
        let all = self.gather_triples(ctx)?;
        let map: std::collections::HashMap<(u64, u64), u64> =
            all.iter().map(|&(r, c, v)| ((r, c), v.to_bits())).collect();
        Ok(all.iter().all(|&(r, c, v)| map.get(&(c, r)) == Some(&v.to_bits())))
    }

    /// Dense copy of the whole matrix; for small test systems.
    pub fn to_dense_global(&self, ctx: &RankContext) -> Result<Vec<Vec<f64>>> {
        let n = self.global_n as usize;
        let mut d = vec![vec![0.0; n]; n];
        for (r, c, v) in self.gather_triples(ctx)? {
            d[r as usize][c as usize] = v;
        }
        Ok(d)
    }

    /// Symmetric elimination of constrained rows and columns: those rows
    /// and columns become the identity. `constrained` is indexed by global
    /// id. Returns the matrix and the rhs correction `-A[:, c] g[c]` for the
    /// owned rows (to be added to the rhs; constrained rows are set by the
    /// caller).
    pub fn eliminate(&self, constrained: &[bool], g: &[f64]) -> (CsrMatrix, Vec<f64>) {
        let mut out = self.clone();
        let mut correction = vec![0.0; self.row_ids.len()];
        out.cols.clear();
        out.vals.clear();
        for i in 0..self.row_ids.len() {
            let r = self.row_ids[i];
            let (c, v) = self.row(i);
            if constrained[r as usize] {
                out.cols.push(r);
                out.vals.push(1.0);
            } else {
                for (&j, &a) in c.iter().zip(v) {
                    if constrained[j as usize] {
                        correction[i] -= a * g[j as usize];
                    } else {
                        out.cols.push(j);
                        out.vals.push(a);
                    }
                }
            }
            out.offsets[i + 1] = out.cols.len();
        }
        (out, correction)
    }

    /// Replace constrained rows (global-id mask) by identity rows, leaving
    /// columns untouched.
    pub fn identity_rows(&self, constrained: &[bool]) -> CsrMatrix {
        let mut out = self.clone();
        out.cols.clear();
        out.vals.clear();
        for i in 0..self.row_ids.len() {
            let r = self.row_ids[i];
            if constrained[r as usize] {
                out.cols.push(r);
                out.vals.push(1.0);
            } else {
                let (c, v) = self.row(i);
                out.cols.extend_from_slice(c);
                out.vals.extend_from_slice(v);
            }
            out.offsets[i + 1] = out.cols.len();
        }
        out
    }
}
