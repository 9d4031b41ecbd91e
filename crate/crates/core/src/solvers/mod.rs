//! Global sparse matrices, Krylov methods, preconditioners and a direct solver.

mod csr;
mod direct;
mod krylov;

pub use crate::dense::{dense_factor_solve, Factorization};
pub use csr::CsrMatrix;
pub use direct::{rcm_ordering, sparse_direct_solve, SparseLu};
pub use krylov::{conjugate_gradient, krylov_solve, KrylovConfig, KrylovMethod, SolveReport};

use crate::error::{Error, Result};

/// Square linear operator acting on global vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols() || y.len() != self.nrows() {
            return Err(Error::DimensionMismatch { expected: self.ncols(), got: x.len() });
        }
        self.matvec_into(x, y);
        Ok(())
    }
}

/// Approximate inverse `z = P^{-1} r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()>;
}

/// Point-Jacobi preconditioner; zero diagonal entries are left unscaled.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        Jacobi { inv_diag: a.diagonal().into_iter().map(|d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect() }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        if r.len() != self.inv_diag.len() {
            return Err(Error::DimensionMismatch { expected: self.inv_diag.len(), got: r.len() });
        }
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
        Ok(())
    }
}

/// Inner preconditioner choice for assembled operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PcKind {
    None,
    Jacobi,
    /// Sparse direct factorization.
    Exact,
}

impl std::str::FromStr for PcKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PcKind::None),
            "jacobi" => Ok(PcKind::Jacobi),
            "exact" | "lu" => Ok(PcKind::Exact),
            other => Err(Error::InvalidConfig(format!("unknown preconditioner {other:?} (none, jacobi, exact)"))),
        }
    }
}

impl std::fmt::Display for PcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PcKind::None => "none",
            PcKind::Jacobi => "jacobi",
            PcKind::Exact => "exact",
        })
    }
}

/// A preconditioner built for a particular assembled matrix.
#[derive(Debug, Clone)]
pub enum MatrixPc {
    None,
    Jacobi(Jacobi),
    Exact(SparseLu),
}

impl MatrixPc {
    pub fn build(kind: PcKind, a: &CsrMatrix) -> Result<Self> {
        Ok(match kind {
            PcKind::None => MatrixPc::None,
            PcKind::Jacobi => MatrixPc::Jacobi(Jacobi::new(a)),
            PcKind::Exact => MatrixPc::Exact(SparseLu::new(a)?),
        })
    }

    pub fn as_dyn(&self) -> Option<&dyn Preconditioner> {
        match self {
            MatrixPc::None => None,
            MatrixPc::Jacobi(j) => Some(j),
            MatrixPc::Exact(l) => Some(l),
        }
    }
}

/// Solves `A x = b` with a Krylov method and an inner preconditioner built from `A`.
pub fn solve_assembled(a: &CsrMatrix, b: &[f64], cfg: &KrylovConfig, pc: PcKind) -> Result<(Vec<f64>, SolveReport)> {
    let t = std::time::Instant::now();
    let p = MatrixPc::build(pc, a)?;
    let setup = t.elapsed().as_secs_f64();
    let (x, mut rep) = krylov_solve(a, b, cfg, p.as_dyn())?;
    rep.setup_seconds = setup;
    Ok((x, rep))
}
