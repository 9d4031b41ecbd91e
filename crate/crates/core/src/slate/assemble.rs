use rayon::prelude::*;

use super::plan::{compile, evaluate_cell, ExecPlan};
use super::SlateExpr;
use crate::dense::DenseTensor;
use crate::error::{Error, Result};
use crate::fem::MixedSpace;
use crate::solvers::CsrMatrix;

/// Cells evaluated per parallel batch; bounds the memory held by element tensors.
const BATCH: usize = 2048;

/// Prescribed values for a set of global dofs of the row space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DirichletBC {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirichletBC {
    pub fn new(dofs: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dofs.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: dofs.len(), got: values.len() });
        }
        Ok(DirichletBC { dofs, values })
    }

    pub fn homogeneous(dofs: Vec<usize>) -> Self {
        let values = vec![0.0; dofs.len()];
        DirichletBC { dofs, values }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self.dofs.iter().find(|&&d| d >= n) {
            Some(&d) => Err(Error::OutOfRange { index: d, len: n }),
            None => Ok(()),
        }
    }
}

/// Result of global assembly, by rank.
#[derive(Debug, Clone, PartialEq)]
pub enum Assembled {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(CsrMatrix),
}

/// Evaluates every cell in parallel and hands the tensors to `scatter` in cell order.
fn for_each_cell(plan: &ExecPlan, mut scatter: impl FnMut(usize, DenseTensor)) -> Result<()> {
    let nc = plan.mesh().n_cells();
    let mut start = 0;
    while start < nc {
        let end = (start + BATCH).min(nc);
        let local: Vec<Result<DenseTensor>> = (start..end).into_par_iter().map(|c| evaluate_cell(plan, c)).collect();
        for (c, t) in (start..end).zip(local) {
            scatter(c, t?);
        }
        start = end;
    }
    Ok(())
}

fn matrix_pattern(rows: &MixedSpace, cols: &MixedSpace) -> CsrMatrix {
    let mut pattern = vec![Vec::new(); rows.ndof()];
    for c in 0..rows.mesh().n_cells() {
        let cd = cols.cell_dofs(c);
        for r in rows.cell_dofs(c) {
            pattern[r].extend_from_slice(&cd);
        }
    }
    CsrMatrix::from_pattern(rows.ndof(), cols.ndof(), pattern)
}

fn assemble_plan(plan: &ExecPlan) -> Result<Assembled> {
    let axes = plan.axes();
    match axes.len() {
        0 => {
            let mut s = 0.0;
            for_each_cell(plan, |_, t| s += t.data()[0])?;
            Ok(Assembled::Scalar(s))
        }
        1 => {
            let mut v = vec![0.0; axes[0].ndof()];
            for_each_cell(plan, |c, t| {
                for (d, x) in axes[0].cell_dofs(c).into_iter().zip(t.data()) {
                    v[d] += x;
                }
            })?;
            Ok(Assembled::Vector(v))
        }
        _ => {
            let mut m = matrix_pattern(&axes[0], &axes[1]);
            for_each_cell(plan, |c, t| {
                let rd = axes[0].cell_dofs(c);
                let cd = axes[1].cell_dofs(c);
                for (i, &r) in rd.iter().enumerate() {
                    for (j, &col) in cd.iter().enumerate() {
                        let v = t.get(i, j);
                        if v != 0.0 {
                            m.add_at(r, col, v);
                        }
                    }
                }
            })?;
            Ok(Assembled::Matrix(m))
        }
    }
}

/// Assembles an expression into global spaces, checking them against `targets`.
///
/// Matrix constraints zero the constrained rows and columns and put 1 on the
/// diagonal; vector constraints overwrite the constrained entries.
pub fn assemble_global(expr: &SlateExpr, targets: &[MixedSpace], bcs: &[DirichletBC]) -> Result<Assembled> {
    let plan = compile(expr)?;
    if plan.axes() != targets {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            detail: format!(
                "expression axes {:?} do not match target spaces {:?}",
                plan.axes().iter().map(|a| a.ndof()).collect::<Vec<_>>(),
                targets.iter().map(|a| a.ndof()).collect::<Vec<_>>()
            ),
        });
    }
    let mut out = assemble_plan(&plan)?;
    match &mut out {
        Assembled::Scalar(_) => {
            if !bcs.is_empty() {
                return Err(Error::InvalidForm("boundary conditions on a scalar".into()));
            }
        }
        Assembled::Vector(v) => {
            for bc in bcs {
                bc.check(v.len())?;
                for (&d, &x) in bc.dofs.iter().zip(&bc.values) {
                    v[d] = x;
                }
            }
        }
        Assembled::Matrix(m) => {
            if !bcs.is_empty() && targets[0] != targets[1] {
                return Err(Error::ShapeMismatch { op: "assemble", detail: "constraints need a square operator".into() });
            }
            for bc in bcs {
                bc.check(m.nrows())?;
                m.constrain_symmetric(&bc.dofs);
            }
        }
    }
    Ok(out)
}

/// Rank-2 assembly into the expression's own spaces.
pub fn assemble_matrix(expr: &SlateExpr, bcs: &[DirichletBC]) -> Result<CsrMatrix> {
    let axes = expr.axes()?;
    match assemble_global(expr, &axes, bcs)? {
        Assembled::Matrix(m) => Ok(m),
        _ => Err(Error::ShapeMismatch { op: "assemble", detail: format!("expected a rank-2 expression, got rank {}", axes.len()) }),
    }
}

/// Rank-1 assembly into the expression's own space.
pub fn assemble_vector(expr: &SlateExpr, bcs: &[DirichletBC]) -> Result<Vec<f64>> {
    let axes = expr.axes()?;
    match assemble_global(expr, &axes, bcs)? {
        Assembled::Vector(v) => Ok(v),
        _ => Err(Error::ShapeMismatch { op: "assemble", detail: format!("expected a rank-1 expression, got rank {}", axes.len()) }),
    }
}

/// Assembles `a x = l` with constraints applied symmetrically: the constrained
/// values are lifted into the right-hand side before rows and columns are zeroed.
pub fn assemble_system(a: &SlateExpr, l: &SlateExpr, bcs: &[DirichletBC]) -> Result<(CsrMatrix, Vec<f64>)> {
    let mut m = assemble_matrix(a, &[])?;
    let mut b = assemble_vector(l, &[])?;
    if m.nrows() != b.len() || m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: b.len() });
    }
    let mut z = vec![0.0; m.ncols()];
    for bc in bcs {
        bc.check(m.nrows())?;
        for (&d, &x) in bc.dofs.iter().zip(&bc.values) {
            z[d] = x;
        }
    }
    let az = m.matvec(&z);
    b.iter_mut().zip(&az).for_each(|(b, a)| *b -= a);
    for bc in bcs {
        m.constrain_symmetric(&bc.dofs);
        for (&d, &x) in bc.dofs.iter().zip(&bc.values) {
            b[d] = x;
        }
    }
    Ok((m, b))
}
