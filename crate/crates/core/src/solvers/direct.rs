//! Sparse direct solve: reverse Cuthill-McKee ordering followed by banded LU
//! with partial pivoting.

use std::collections::VecDeque;

use super::csr::CsrMatrix;
use super::Preconditioner;
use crate::error::{Error, Result};

/// Reverse Cuthill-McKee permutation of the symmetrized pattern; `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for &c in a.row(r).0 {
            if c != r {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| {
        let mut q = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = q.pop_front() {
            out.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (deg[u], u));
            for u in nb {
                visited[u] = true;
                q.push_back(u);
            }
        }
    };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (deg[v], v));
    for &s in &by_degree {
        if visited[s] {
            continue;
        }
        // pseudo-peripheral start: last vertex of a BFS from the lowest-degree vertex
        let mut probe_seen = visited.clone();
        let mut probe = Vec::new();
        bfs(s, &mut probe_seen, &mut probe);
        let start = *probe.last().unwrap();
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Banded LU factors of a permuted sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    perm: Vec<usize>,
    kl: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        let n = a.nrows();
        let perm = rcm_ordering(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for r in 0..n {
            for &c in a.row(r).0 {
                let (i, j) = (inv[r], inv[c]);
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        // row i stores columns i - kl ..= i + ku + kl
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut row_max = vec![0.0f64; n];
        for r in 0..n {
            let i = inv[r];
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                band[i * width + j + kl - i] += v;
                row_max[i] = row_max[i].max(v.abs());
            }
        }
        let at = |i: usize, j: usize| i * width + j + kl - i;
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for i in k + 1..=last {
                let v = band[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-12 * row_max[p].max(f64::MIN_POSITIVE) || best == 0.0 {
                return Err(Error::Singular { row: perm[k], pivot: best });
            }
            pivots[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    band.swap(at(k, j), at(p, j));
                }
                row_max.swap(k, p);
            }
            let piv = band[at(k, k)];
            for i in k + 1..=last {
                let l = band[at(i, k)] / piv;
                if l == 0.0 {
                    continue;
                }
                band[at(i, k)] = l;
                for j in k + 1..=jmax {
                    band[at(i, j)] -= l * band[at(k, j)];
                }
            }
        }
        Ok(SparseLu { n, perm, kl, width, band, pivots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let (kl, w) = (self.kl, self.width);
        let at = |i: usize, j: usize| i * w + j + kl - i;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                    y[i] -= self.band[at(i, k)] * yk;
                }
            }
        }
        let ku_kl = w - 1 - kl;
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..=(i + ku_kl).min(n - 1) {
                s -= self.band[at(i, j)] * y[j];
            }
            y[i] = s / self.band[at(i, i)];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

impl Preconditioner for SparseLu {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(&self.solve(r)?);
        Ok(())
    }
}

/// Direct solve of `A x = b`.
pub fn sparse_direct_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{DenseTensor, LuFactor};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    #[test]
    fn diagonal_divides() {
        let a = CsrMatrix::from_diagonal(&[2.0, 4.0, -5.0]);
        let x = sparse_direct_solve(&a, &[1.0, 2.0, 10.0]).unwrap();
        assert_eq!(x, vec![0.5, 0.5, -2.0]);
    }

    #[test]
    fn random_spd_matches_dense() {
        let mut rng = StdRng::seed_from_u64(4);
        let n = 50;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 10.0 + rng.gen_range(0.0..1.0)));
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = rng.gen_range(-1.0..1.0);
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = sparse_direct_solve(&a, &b).unwrap();
        let xd = LuFactor::new(&a.to_dense()).unwrap().solve_vec(&b);
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn pivoting_on_unsymmetric_matrix() {
        // zero leading diagonal forces a row interchange
        let d = DenseTensor::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 3.0], vec![0.0, 4.0, 1.0]]);
        let a = CsrMatrix::from_dense(&d, 0.0);
        let b = [2.0, 5.0, 5.0];
        let x = sparse_direct_solve(&a, &b).unwrap();
        assert!(a.residual_norm(&x, &b) < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)]).unwrap();
        assert!(matches!(sparse_direct_solve(&a, &[1.0, 1.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn rcm_is_permutation() {
        let a = CsrMatrix::from_triplets(4, 4, &[(0, 3, 1.0), (3, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (0, 0, 1.0), (3, 3, 1.0)]).unwrap();
        let mut p = rcm_ordering(&a);
        p.sort();
        assert_eq!(p, vec![0, 1, 2, 3]);
    }
}
