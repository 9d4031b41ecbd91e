//! Small dense tensors (rank 0, 1 or 2) and their factorizations.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Relative pivot size below which a local factorization is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Row-major dense tensor with up to two axes.
///
/// `blocks` optionally records, per axis, the offsets at which each field of a
/// mixed space starts (with a trailing total), so `blocks[a] = [0, n0, n0+n1, ..]`.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    blocks: Option<Vec<Vec<usize>>>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseTensor{:?} ", self.shape)?;
        match self.rank() {
            2 => {
                writeln!(f)?;
                for i in 0..self.shape[0] {
                    writeln!(f, "  {:?}", self.row(i))?;
                }
                Ok(())
            }
            _ => write!(f, "{:?}", self.data),
        }
    }
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= 2, "rank > 2");
        DenseTensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()], blocks: None }
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor { shape: vec![], data: vec![v], blocks: None }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        DenseTensor { shape: vec![v.len()], data: v, blocks: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(shape.len() <= 2, "rank > 2");
        assert_eq!(shape.iter().product::<usize>(), data.len(), "entry count does not match shape");
        DenseTensor { shape: shape.to_vec(), data, blocks: None }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            assert_eq!(r.len(), n, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseTensor { shape: vec![m, n], data, blocks: None }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_blocks(mut self, blocks: Vec<Vec<usize>>) -> Self {
        assert_eq!(blocks.len(), self.rank());
        for (axis, offs) in blocks.iter().enumerate() {
            assert_eq!(offs.first(), Some(&0));
            assert_eq!(offs.last(), Some(&self.shape[axis]), "block offsets must partition the axis");
            assert!(offs.windows(2).all(|w| w[0] <= w[1]));
        }
        self.blocks = Some(blocks);
        self
    }

    pub fn blocks(&self) -> Option<&[Vec<usize>]> {
        self.blocks.as_deref()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn nrows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn ncols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.ncols();
        self.data[i * n + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let n = self.ncols();
        self.data[i * n + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ncols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn norm_inf(&self) -> f64 {
        if self.rank() == 2 {
            (0..self.nrows()).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        } else {
            self.max_abs()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "add", detail: format!("{:?} vs {:?}", self.shape, other.shape) });
        }
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn neg(&self) -> DenseTensor {
        self.scale(-1.0)
    }

    pub fn transpose(&self) -> DenseTensor {
        if self.rank() < 2 {
            return self.clone();
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        let blocks = self.blocks.as_ref().map(|b| vec![b[1].clone(), b[0].clone()]);
        DenseTensor { shape: vec![n, m], data, blocks }
    }

    /// Contraction of the last axis of `self` with the first axis of `other`.
    /// Rank-0 operands scale the other side.
    pub fn contract(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.rank() == 0 {
            return Ok(other.scale(self.data[0]));
        }
        if other.rank() == 0 {
            return Ok(self.scale(other.data[0]));
        }
        let k = *self.shape.last().unwrap();
        if k != other.shape[0] {
            return Err(Error::ShapeMismatch { op: "mul", detail: format!("{:?} * {:?}", self.shape, other.shape) });
        }
        let m = if self.rank() == 2 { self.shape[0] } else { 1 };
        let n = if other.rank() == 2 { other.shape[1] } else { 1 };
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let out = &mut data[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        let mut shape = Vec::new();
        if self.rank() == 2 {
            shape.push(m);
        }
        if other.rank() == 2 {
            shape.push(n);
        }
        Ok(DenseTensor { shape, data, blocks: None })
    }

    /// Extracts the sub-tensor made of the given index ranges per axis.
    pub fn gather(&self, ranges: &[Vec<Range<usize>>]) -> DenseTensor {
        assert_eq!(ranges.len(), self.rank());
        match self.rank() {
            0 => self.clone(),
            1 => {
                let data: Vec<f64> = ranges[0].iter().flat_map(|r| self.data[r.clone()].iter().copied()).collect();
                DenseTensor::vector(data)
            }
            _ => {
                let rows: Vec<usize> = ranges[0].iter().flat_map(|r| r.clone()).collect();
                let cols: Vec<usize> = ranges[1].iter().flat_map(|r| r.clone()).collect();
                let n = self.ncols();
                let mut data = Vec::with_capacity(rows.len() * cols.len());
                for &i in &rows {
                    for &j in &cols {
                        data.push(self.data[i * n + j]);
                    }
                }
                DenseTensor { shape: vec![rows.len(), cols.len()], data, blocks: None }
            }
        }
    }

    pub fn is_square(&self) -> bool {
        self.rank() == 2 && self.shape[0] == self.shape[1]
    }

    /// Dense inverse through partial-pivot LU.
    pub fn inverse(&self) -> Result<DenseTensor> {
        let lu = LuFactor::new(self)?;
        Ok(lu.solve(&DenseTensor::identity(self.nrows())))
    }
}

/// Direct factorization strategy for local solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Factorization {
    #[default]
    PartialPivLu,
    Cholesky,
}

/// LU factorization with partial (row) pivoting.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactor {
    pub fn new(a: &DenseTensor) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch { op: "lu", detail: format!("non-square {:?}", a.shape) });
        }
        let n = a.nrows();
        let mut lu = a.data.clone();
        let row_max: Vec<f64> = (0..n).map(|i| a.row(i).iter().fold(0.0, |m: f64, v| m.max(v.abs()))).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n).map(|i| (i, lu[i * n + k].abs())).fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let scale = row_max[perm[p]];
            if pmax <= PIVOT_TOLERANCE * scale || scale == 0.0 {
                return Err(Error::Singular { row: k, pivot: pmax });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[k * n + k];
            for i in k + 1..n {
                let l = lu[i * n + k] / piv;
                lu[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= l * lu[k * n + j];
                    }
                }
            }
        }
        Ok(LuFactor { n, lu, perm })
    }

    /// Solves `A x = b` in place of a column-major-free right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    pub fn solve(&self, b: &DenseTensor) -> DenseTensor {
        solve_columns(b, |col| self.solve_vec(col))
    }
}

/// Cholesky factorization `A = L L^T` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &DenseTensor) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch { op: "cholesky", detail: format!("non-square {:?}", a.shape) });
        }
        let asym = a.max_abs_diff(&a.transpose());
        let norm = a.norm_inf();
        if asym > 1e-10 * norm {
            return Err(Error::NotSymmetric(asym));
        }
        let n = a.nrows();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= PIVOT_TOLERANCE * a.get(j, j).abs().max(norm * f64::EPSILON) {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(CholeskyFactor { n, l })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn solve(&self, b: &DenseTensor) -> DenseTensor {
        solve_columns(b, |col| self.solve_vec(col))
    }
}

fn solve_columns(b: &DenseTensor, solve: impl Fn(&[f64]) -> Vec<f64>) -> DenseTensor {
    match b.rank() {
        1 => DenseTensor::vector(solve(&b.data)),
        2 => {
            let (m, n) = (b.shape[0], b.shape[1]);
            let mut out = DenseTensor::zeros(&[m, n]);
            let mut col = vec![0.0; m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = b.data[i * n + j];
                }
                let x = solve(&col);
                for i in 0..m {
                    out.data[i * n + j] = x[i];
                }
            }
            out
        }
        _ => panic!("cannot solve against a scalar right-hand side"),
    }
}

/// Solves `A X = B` with the requested factorization.
pub fn dense_factor_solve(a: &DenseTensor, b: &DenseTensor, kind: Factorization) -> Result<DenseTensor> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch { op: "solve", detail: format!("non-square {:?}", a.shape()) });
    }
    if b.rank() == 0 || b.shape()[0] != a.nrows() {
        return Err(Error::ShapeMismatch { op: "solve", detail: format!("{:?} \\ {:?}", a.shape(), b.shape()) });
    }
    match kind {
        Factorization::PartialPivLu => Ok(LuFactor::new(a)?.solve(b)),
        Factorization::Cholesky => Ok(CholeskyFactor::new(a)?.solve(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_spd(n: usize, rng: &mut StdRng) -> DenseTensor {
        let g = DenseTensor::from_vec(&[n, n], (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut a = g.contract(&g.transpose()).unwrap();
        for i in 0..n {
            a.add_to(i, i, n as f64);
        }
        a
    }

    #[test]
    fn identity_solve() {
        let b = DenseTensor::vector(vec![1.0, -2.0, 3.5]);
        for kind in [Factorization::PartialPivLu, Factorization::Cholesky] {
            let x = dense_factor_solve(&DenseTensor::identity(3), &b, kind).unwrap();
            assert_eq!(x, b);
        }
    }

    #[test]
    fn spd_against_inverse() {
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_spd(5, &mut rng);
        let b = DenseTensor::from_vec(&[5, 2], (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let via_inv = a.inverse().unwrap().contract(&b).unwrap();
        for kind in [Factorization::PartialPivLu, Factorization::Cholesky] {
            let x = dense_factor_solve(&a, &b, kind).unwrap();
            assert!(x.max_abs_diff(&via_inv) < 1e-10);
            let r = a.contract(&x).unwrap().add(&b.neg()).unwrap();
            assert!(r.max_abs() <= 1e-10 * b.max_abs());
        }
    }

    #[test]
    fn singular_rank_one() {
        let a = DenseTensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let b = DenseTensor::vector(vec![1.0, 1.0]);
        assert!(matches!(dense_factor_solve(&a, &b, Factorization::PartialPivLu), Err(Error::Singular { .. })));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = DenseTensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]);
        let b = DenseTensor::vector(vec![1.0, 1.0]);
        assert!(matches!(dense_factor_solve(&a, &b, Factorization::Cholesky), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn contraction_ranks() {
        let a = DenseTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let v = DenseTensor::vector(vec![1.0, 1.0]);
        assert_eq!(a.contract(&v).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(v.contract(&a).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(v.contract(&v).unwrap().rank(), 0);
        assert!(a.contract(&DenseTensor::vector(vec![1.0; 3])).is_err());
    }

    #[test]
    #[allow(clippy::single_range_in_vec_init)]
    fn gather_blocks() {
        let a = DenseTensor::from_vec(&[3, 3], (0..9).map(|v| v as f64).collect());
        let s = a.gather(&[vec![0..1, 2..3], vec![1..3]]);
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 7.0, 8.0]);
    }
}
