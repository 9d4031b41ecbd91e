use rayon::prelude::*;

use crate::dense::DenseTensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Rows below this count are multiplied serially.
const PAR_ROWS: usize = 4096;

impl CsrMatrix {
    /// Zero matrix with the given per-row column sets (duplicates allowed).
    pub fn from_pattern(nrows: usize, ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), nrows);
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < ncols));
            indices.extend_from_slice(r);
            indptr.push(indices.len());
        }
        let data = vec![0.0; indices.len()];
        CsrMatrix { nrows, ncols, indptr, indices, data }
    }

    /// Sums duplicate entries in input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::OutOfRange { index: r.max(c), len: nrows.max(ncols) });
            }
            rows[r].push(c);
        }
        let mut m = Self::from_pattern(nrows, ncols, rows);
        for &(r, c, v) in triplets {
            m.add_at(r, c, v);
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![1.0; n] }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.data.copy_from_slice(d);
        m
    }

    /// Keeps entries with `|a_ij| > drop_tol`.
    pub fn from_dense(a: &DenseTensor, drop_tol: f64) -> Self {
        let (nr, nc) = (a.nrows(), a.ncols());
        let mut trip = Vec::new();
        for i in 0..nr {
            for j in 0..nc {
                let v = a.get(i, j);
                if v.abs() > drop_tol {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nr, nc, &trip).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].binary_search(&c).ok().map(|p| a + p)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |p| self.data[p])
    }

    /// Adds to an existing pattern entry; panics if `(r, c)` is not stored.
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        let p = self.position(r, c).unwrap_or_else(|| panic!("entry ({r}, {c}) not in sparsity pattern"));
        self.data[p] += v;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row = |r: usize| -> f64 {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            let mut s = 0.0;
            for p in a..b {
                s += self.data[p] * x[self.indices[p]];
            }
            s
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(r, yr)| *yr = row(r));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = row(r);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            for &c in self.row(r).0 {
                rows[c].push(r);
            }
        }
        let mut t = Self::from_pattern(self.ncols, self.nrows, rows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.add_at(c, r, v);
            }
        }
        t
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut d = DenseTensor::zeros(&[self.nrows, self.ncols]);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d.add_to(r, c, v);
            }
        }
        d
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows).map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `|| A - A^T ||_inf`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        (0..self.nrows)
            .map(|r| {
                let mut s = 0.0;
                let (c1, v1) = self.row(r);
                let (c2, v2) = t.row(r);
                let (mut i, mut j) = (0, 0);
                while i < c1.len() || j < c2.len() {
                    if j == c2.len() || (i < c1.len() && c1[i] < c2[j]) {
                        s += v1[i].abs();
                        i += 1;
                    } else if i == c1.len() || c2[j] < c1[i] {
                        s += v2[j].abs();
                        j += 1;
                    } else {
                        s += (v1[i] - v2[j]).abs();
                        i += 1;
                        j += 1;
                    }
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Replaces the listed rows by identity rows (columns untouched).
    pub fn constrain_rows(&mut self, dofs: &[usize]) {
        for &d in dofs {
            let (a, b) = (self.indptr[d], self.indptr[d + 1]);
            for p in a..b {
                self.data[p] = if self.indices[p] == d { 1.0 } else { 0.0 };
            }
            assert!(self.position(d, d).is_some(), "constrained row {d} lacks a diagonal entry");
        }
    }

    /// Zeroes the listed rows and columns and puts 1 on their diagonal.
    pub fn constrain_symmetric(&mut self, dofs: &[usize]) {
        let mut mask = vec![false; self.ncols];
        for &d in dofs {
            mask[d] = true;
        }
        for r in 0..self.nrows {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            for p in a..b {
                let c = self.indices[p];
                if mask[r] || mask[c] {
                    self.data[p] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// `Ax - b` norm helper.
    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.matvec(x);
        ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 2.0), (0, 2, 0.5), (0, 0, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.matvec(&[1.0, 1.0, 2.0]), vec![4.0, 2.0]);
        assert!(CsrMatrix::from_triplets(1, 1, &[(1, 0, 1.0)]).is_err());
    }

    #[test]
    fn transpose_and_asymmetry() {
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (1, 0, 2.0), (2, 0, 1.0)]).unwrap();
        assert_eq!(m.asymmetry(), 1.0);
        let t = m.transpose();
        assert_eq!(t.get(0, 2), 1.0);
        assert_eq!(t.to_dense().transpose(), m.to_dense());
    }

    #[test]
    fn constraints() {
        let mut m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let mut r = m.clone();
        r.constrain_rows(&[1]);
        assert_eq!(r.to_dense().data(), &[4.0, 1.0, 0.0, 1.0]);
        m.constrain_symmetric(&[1]);
        assert_eq!(m.to_dense().data(), &[4.0, 0.0, 0.0, 1.0]);
    }
}
