//! Preconditioners built from element-local expressions: static condensation
//! of cellwise-discontinuous fields and hybridization of conforming mixed systems.

mod hybrid;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

pub use hybrid::{BrokenTransfer, HybridizationPc};

use crate::dense::Factorization;
use crate::error::{Error, Result};
use crate::fem::MixedSpace;
use crate::slate::{assemble_matrix, assemble_vector, AssembledVector, DirichletBC, SlateExpr};
use crate::solvers::{krylov_solve, CsrMatrix, KrylovConfig, MatrixPc, PcKind, Preconditioner};

/// Partition of the fields of a mixed space into eliminated and condensed sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSplit {
    pub eliminate: Vec<usize>,
    pub condensed: Vec<usize>,
}

impl FieldSplit {
    pub fn new(eliminate: Vec<usize>, condensed: Vec<usize>, n_fields: usize) -> Result<Self> {
        let mut all: Vec<usize> = eliminate.iter().chain(&condensed).copied().collect();
        all.sort_unstable();
        if eliminate.is_empty() || condensed.is_empty() {
            return Err(Error::InvalidSplit("both field sets must be non-empty".into()));
        }
        if all != (0..n_fields).collect::<Vec<_>>() {
            return Err(Error::InvalidSplit(format!("fields {eliminate:?} and {condensed:?} must partition 0..{n_fields}")));
        }
        let sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&eliminate) || !sorted(&condensed) {
            return Err(Error::InvalidSplit("field indices must be increasing".into()));
        }
        Ok(FieldSplit { eliminate, condensed })
    }
}

/// Global indices of `fields` of `space`, in subspace order.
pub(crate) fn field_indices(space: &MixedSpace, fields: &[usize]) -> Vec<usize> {
    fields.iter().flat_map(|&f| space.field_range(f)).collect()
}

/// Krylov method and preconditioner for the condensed system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolve {
    pub krylov: KrylovConfig,
    pub pc: PcKind,
}

impl Default for InnerSolve {
    fn default() -> Self {
        InnerSolve { krylov: KrylovConfig::cg(1e-12), pc: PcKind::Jacobi }
    }
}

impl InnerSolve {
    pub fn exact() -> Self {
        InnerSolve { pc: PcKind::Exact, ..InnerSolve::default() }
    }

    /// Reads the keys `ksp_type`, `ksp_rtol`, `ksp_atol`, `ksp_max_it` and
    /// `pc_type`; missing keys keep their defaults, unknown keys are errors.
    pub fn from_options(opts: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = InnerSolve::default();
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("{k}: expected a number, got {v:?}")));
        for (k, v) in opts {
            match k.as_str() {
                "ksp_type" => s.krylov.method = v.parse()?,
                "ksp_rtol" => s.krylov.rtol = num(k, v)?,
                "ksp_atol" => s.krylov.atol = num(k, v)?,
                "ksp_max_it" => {
                    s.krylov.maxiter = v.parse().map_err(|_| Error::InvalidConfig(format!("ksp_max_it: expected an integer, got {v:?}")))?
                }
                "pc_type" => s.pc = v.parse()?,
                other => return Err(Error::InvalidConfig(format!("unknown option {other:?}"))),
            }
        }
        s.krylov.validate()?;
        Ok(s)
    }

    pub fn to_options(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("ksp_type".to_string(), self.krylov.method.to_string()),
            ("ksp_rtol".to_string(), format!("{:e}", self.krylov.rtol)),
            ("ksp_atol".to_string(), format!("{:e}", self.krylov.atol)),
            ("ksp_max_it".to_string(), self.krylov.maxiter.to_string()),
            ("pc_type".to_string(), self.pc.to_string()),
        ])
    }
}

/// Running totals over inner solves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InnerStats {
    pub applications: usize,
    pub iterations: usize,
    pub max_relative_residual: f64,
    pub all_converged: bool,
    pub forward_seconds: f64,
    pub trace_seconds: f64,
    pub backsub_seconds: f64,
}

/// Static condensation: eliminates cellwise-discontinuous fields locally and
/// solves the condensed system on the remaining ones.
///
/// Applied to `r`, it returns the solution of the full system whose
/// constrained rows (the Dirichlet dofs of the condensed fields) read
/// `x_d = r_d`.
pub struct Scpc {
    space: MixedSpace,
    split: FieldSplit,
    elim_idx: Vec<usize>,
    cond_idx: Vec<usize>,
    elim_space: MixedSpace,
    cond_space: MixedSpace,
    a_ce: SlateExpr,
    a_ee: SlateExpr,
    a_ec: SlateExpr,
    schur: SlateExpr,
    s_full: CsrMatrix,
    s_bc: CsrMatrix,
    bc_dofs: Vec<usize>,
    inner: InnerSolve,
    inner_pc: MatrixPc,
    setup_seconds: f64,
    stats: Mutex<InnerStats>,
}

impl std::fmt::Debug for Scpc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scpc").field("split", &self.split).field("condensed_dofs", &self.s_full.nrows()).finish()
    }
}

impl Scpc {
    /// `bc_dofs` index the condensed subspace.
    pub fn new(a: &SlateExpr, split: FieldSplit, bc_dofs: &[usize], inner: InnerSolve) -> Result<Self> {
        let t = Instant::now();
        let axes = a.axes()?;
        if axes.len() != 2 || axes[0] != axes[1] {
            return Err(Error::InvalidSplit("static condensation needs a square operator on one mixed space".into()));
        }
        let space = axes[0].clone();
        let split = FieldSplit::new(split.eliminate, split.condensed, space.n_fields())?;
        for &f in &split.eliminate {
            if !space.field(f).is_cellwise_discontinuous() {
                return Err(Error::InvalidSplit(format!(
                    "field {f} ({:?}) couples cells and cannot be eliminated locally",
                    space.field(f).family()
                )));
            }
        }
        let (e, c) = (&split.eliminate[..], &split.condensed[..]);
        let a_ee = a.block(e, e);
        let a_ec = a.block(e, c);
        let a_ce = a.block(c, e);
        let s = a.block(c, c) - &a_ce * a_ee.inv() * &a_ec;
        let s_full = assemble_matrix(&s, &[])?;
        let n = s_full.nrows();
        if let Some(&d) = bc_dofs.iter().find(|&&d| d >= n) {
            return Err(Error::OutOfRange { index: d, len: n });
        }
        let mut s_bc = s_full.clone();
        s_bc.constrain_symmetric(bc_dofs);
        let inner_pc = MatrixPc::build(inner.pc, &s_bc)?;
        Ok(Scpc {
            elim_idx: field_indices(&space, e),
            cond_idx: field_indices(&space, c),
            elim_space: space.subspace(e),
            cond_space: space.subspace(c),
            space,
            split,
            a_ce,
            a_ee,
            a_ec,
            schur: s,
            s_full,
            s_bc,
            bc_dofs: bc_dofs.to_vec(),
            inner,
            inner_pc,
            setup_seconds: t.elapsed().as_secs_f64(),
            stats: Mutex::new(InnerStats { all_converged: true, ..Default::default() }),
        })
    }

    pub fn space(&self) -> &MixedSpace {
        &self.space
    }

    pub fn split(&self) -> &FieldSplit {
        &self.split
    }

    /// Condensed operator before constraints.
    pub fn condensed_operator(&self) -> &CsrMatrix {
        &self.s_full
    }

    /// Condensed operator with constrained rows and columns.
    pub fn constrained_operator(&self) -> &CsrMatrix {
        &self.s_bc
    }

    pub fn setup_seconds(&self) -> f64 {
        self.setup_seconds
    }

    pub fn stats(&self) -> InnerStats {
        self.stats.lock().expect("stats lock").clone()
    }

    fn elim_vector(&self, r: &[f64]) -> Result<SlateExpr> {
        Ok(SlateExpr::vector(&AssembledVector::new(self.elim_space.clone(), self.elim_idx.iter().map(|&i| r[i]).collect())?))
    }

    fn condensed_rhs_expr(&self, r: &[f64]) -> Result<SlateExpr> {
        Ok(&self.a_ce * self.a_ee.inv() * self.elim_vector(r)?)
    }

    /// Recovery expressions, one per eliminated field.
    fn recovery_exprs(&self, r: &[f64], x_c: &[f64]) -> Result<Vec<SlateExpr>> {
        let lam = SlateExpr::vector(&AssembledVector::new(self.cond_space.clone(), x_c.to_vec())?);
        let rhs = self.elim_vector(r)? - &self.a_ec * lam;
        let lu = Factorization::PartialPivLu;
        if self.split.eliminate.len() == 2 {
            // pressure first through the local Schur complement, then velocity
            let (f0, f1): (&[usize], &[usize]) = (&[0], &[1]);
            let a00 = self.a_ee.block(f0, f0);
            let a01 = self.a_ee.block(f0, f1);
            let a10 = self.a_ee.block(f1, f0);
            let a11 = self.a_ee.block(f1, f1);
            let (r0, r1) = (rhs.blocks(&[f0]), rhs.blocks(&[f1]));
            let a00_r0 = a00.solve(&r0, lu);
            let schur = &a11 - &a10 * a00.solve(&a01, lu);
            let p = schur.solve(&(r1 - &a10 * &a00_r0), lu);
            let u = a00.solve(&(r0 - &a01 * &p), lu);
            Ok(vec![u, p])
        } else {
            Ok(vec![self.a_ee.solve(&rhs, lu)])
        }
    }

    /// The element-level expressions this preconditioner evaluates for a
    /// residual `r` and condensed solution `x_c`, with names.
    pub fn expressions(&self, r: &[f64], x_c: &[f64]) -> Result<Vec<(String, SlateExpr)>> {
        let mut out = vec![
            ("schur".to_string(), self.schur.clone()),
            ("condensed_rhs".to_string(), self.condensed_rhs_expr(r)?),
            ("local_inverse".to_string(), self.a_ee.inv()),
        ];
        for (f, e) in self.split.eliminate.iter().zip(self.recovery_exprs(r, x_c)?) {
            out.push((format!("recover_field{f}"), e));
        }
        Ok(out)
    }

    /// Condensed right-hand side `r_c - A_ce A_ee^{-1} r_e`.
    pub fn condensed_rhs(&self, r: &[f64]) -> Result<Vec<f64>> {
        let corr = assemble_vector(&self.condensed_rhs_expr(r)?, &[])?;
        Ok(self.cond_idx.iter().zip(&corr).map(|(&i, c)| r[i] - c).collect())
    }

    /// Local recovery of the eliminated fields from the condensed solution.
    pub fn recover(&self, r: &[f64], x_c: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for e in self.recovery_exprs(r, x_c)? {
            out.extend(assemble_vector(&e, &[])?);
        }
        Ok(out)
    }

    /// Solves the constrained condensed system `S x_c = rhs` with `x_c[d] = values[d]`.
    pub fn solve_condensed(&self, rhs: &[f64], values: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; rhs.len()];
        for (&d, &v) in self.bc_dofs.iter().zip(values) {
            z[d] = v;
        }
        let sz = self.s_full.matvec(&z);
        let mut b: Vec<f64> = rhs.iter().zip(&sz).map(|(r, s)| r - s).collect();
        for (&d, &v) in self.bc_dofs.iter().zip(values) {
            b[d] = v;
        }
        let t = Instant::now();
        let (x, rep) = krylov_solve(&self.s_bc, &b, &self.inner.krylov, self.inner_pc.as_dyn())?;
        let mut st = self.stats.lock().expect("stats lock");
        st.applications += 1;
        st.iterations += rep.iterations;
        st.max_relative_residual = st.max_relative_residual.max(rep.relative_residual);
        st.all_converged &= rep.converged;
        st.trace_seconds += t.elapsed().as_secs_f64();
        Ok(x)
    }

    /// Full solve for a right-hand side whose constrained entries hold the prescribed values.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.space.ndof() {
            return Err(Error::DimensionMismatch { expected: self.space.ndof(), got: r.len() });
        }
        let t = Instant::now();
        let e = self.condensed_rhs(r)?;
        self.stats.lock().expect("stats lock").forward_seconds += t.elapsed().as_secs_f64();
        let values: Vec<f64> = self.bc_dofs.iter().map(|&d| r[self.cond_idx[d]]).collect();
        let x_c = self.solve_condensed(&e, &values)?;
        let t = Instant::now();
        let x_e = self.recover(r, &x_c)?;
        self.stats.lock().expect("stats lock").backsub_seconds += t.elapsed().as_secs_f64();
        let mut x = vec![0.0; r.len()];
        for (&i, v) in self.elim_idx.iter().zip(x_e) {
            x[i] = v;
        }
        for (&i, &v) in self.cond_idx.iter().zip(&x_c) {
            x[i] = v;
        }
        Ok(x)
    }

    /// Constrained dofs in the full space.
    pub fn full_bc_dofs(&self) -> Vec<usize> {
        self.bc_dofs.iter().map(|&d| self.cond_idx[d]).collect()
    }

    /// Full-space operator with the constrained rows replaced by identity rows,
    /// which is the operator this preconditioner inverts.
    pub fn constrained_full_operator(a: &SlateExpr, full_bc_dofs: &[usize]) -> Result<CsrMatrix> {
        let mut m = assemble_matrix(a, &[])?;
        m.constrain_rows(full_bc_dofs);
        Ok(m)
    }
}

impl Preconditioner for Scpc {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(&self.solve(r)?);
        Ok(())
    }
}

/// Dirichlet constraint in the full space from one on a field.
pub fn lift_bc(space: &MixedSpace, field: usize, bc: &DirichletBC) -> DirichletBC {
    let off = space.offsets()[field];
    DirichletBC { dofs: bc.dofs.iter().map(|d| d + off).collect(), values: bc.values.clone() }
}
