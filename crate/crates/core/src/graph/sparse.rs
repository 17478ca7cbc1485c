//! Square CSR matrices for adjacency patterns and propagation operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(n: usize) -> Self {
        Self { n, offsets: vec![0; n + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { n, offsets: (0..=n).collect(), indices: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(n: usize, offsets: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = Self { n, offsets, indices, values };
        m.validate()?;
        Ok(m)
    }

    /// Duplicate coordinates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::Shape(format!("entry ({r},{c}) outside {n}x{n}")));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; n + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self { n, offsets, indices, values })
    }

    /// Binary pattern from (row, col) pairs; duplicates collapse to a single 1.
    pub fn from_pattern(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = edges.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let triplets: Vec<_> = sorted.into_iter().map(|(r, c)| (r, c, 1.0)).collect();
        Self::from_triplets(n, &triplets)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.n + 1 || self.offsets[0] != 0 {
            return Err(Error::Consistency("offsets must have length n+1 and start at 0".into()));
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Consistency("offsets not monotone".into()));
        }
        if self.offsets[self.n] != self.indices.len() || self.indices.len() != self.values.len() {
            return Err(Error::Consistency("last offset must equal nnz".into()));
        }
        for r in 0..self.n {
            let cols = &self.indices[self.offsets[r]..self.offsets[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= self.n) {
                return Err(Error::Consistency(format!("row {r}: column indices not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.n, &triplets).expect("transpose stays in bounds")
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut t = Tensor2::zeros(self.n, self.n);
        for (r, c, v) in self.iter() {
            t.set(r, c, v);
        }
        t
    }

    /// `self · x`, written row by row so each output cell has a single writer.
    pub fn mul_dense(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.rows() != self.n {
            return Err(Error::Shape(format!("sparse {}x{} times dense {}x{}", self.n, self.n, x.rows(), x.cols())));
        }
        let mut out = Tensor2::zeros(self.n, x.cols());
        self.mul_dense_into(x, &mut out);
        Ok(out)
    }

    /// `out += self · x`
    pub(crate) fn mul_dense_into(&self, x: &Tensor2, out: &mut Tensor2) {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let orow = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += selfᵀ · x` without materializing the transpose.
    pub(crate) fn mul_dense_transposed_into(&self, x: &Tensor2, out: &mut Tensor2) {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let xrow = x.row(r).to_vec();
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &xv) in out.row_mut(c).iter_mut().zip(&xrow) {
                    *o += v * xv;
                }
            }
        }
    }

    /// Pattern union with the transpose, all stored values set to 1.
    pub fn symmetrize_pattern(&self) -> Self {
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(2 * self.nnz());
        for (r, c, _) in self.iter() {
            edges.push((r, c));
            edges.push((c, r));
        }
        Self::from_pattern(self.n, &edges).expect("in bounds")
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }
}
