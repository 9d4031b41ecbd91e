//! Naive reference evaluator: walks the tree recursively without sharing and
//! performs the linear algebra with nalgebra.

use nalgebra::DMatrix;

use super::{Node, SlateExpr};
use crate::dense::DenseTensor;
use crate::error::{Error, Result};
use crate::forms::assemble_local;

/// Local value as a matrix; vectors are columns, scalars 1x1. The flag records the rank.
fn eval(e: &SlateExpr, cell: usize) -> Result<(DMatrix<f64>, usize)> {
    Ok(match e.node() {
        Node::Tensor(f) => to_mat(&assemble_local(f, cell)?),
        Node::Vector(v) => {
            let g = v.gather(cell);
            (DMatrix::from_column_slice(g.len(), 1, &g), 1)
        }
        Node::Add(a, b) => {
            let ((x, r), (y, _)) = (eval(a, cell)?, eval(b, cell)?);
            (x + y, r)
        }
        Node::Mul(a, b) => {
            let ((x, ra), (y, rb)) = (eval(a, cell)?, eval(b, cell)?);
            match (ra, rb) {
                (0, _) => (y * x[(0, 0)], rb),
                (_, 0) => (x * y[(0, 0)], ra),
                (1, 1) => (x.transpose() * y, 0),
                (1, 2) => ((x.transpose() * y).transpose(), 1),
                (2, _) => (x * y, rb),
                _ => unreachable!(),
            }
        }
        Node::Negate(a) => {
            let (x, r) = eval(a, cell)?;
            (-x, r)
        }
        Node::Transpose(a) => {
            let (x, r) = eval(a, cell)?;
            if r == 2 {
                (x.transpose(), 2)
            } else {
                (x, r)
            }
        }
        Node::Inverse(a) => {
            let (x, _) = eval(a, cell)?;
            let inv = x.try_inverse().ok_or(Error::SingularLocal { cell, row: 0, pivot: 0.0 })?;
            (inv, 2)
        }
        Node::Solve(a, b, _) => {
            let ((x, _), (y, rb)) = (eval(a, cell)?, eval(b, cell)?);
            let sol = x.lu().solve(&y).ok_or(Error::SingularLocal { cell, row: 0, pivot: 0.0 })?;
            (sol, rb)
        }
        Node::Blocks(a, fields) => {
            let axes = super::infer_axes(a)?;
            let (x, r) = eval(a, cell)?;
            let idx = |axis: usize| -> Vec<usize> {
                let off = axes[axis].local_offsets();
                fields[axis].iter().flat_map(|&f| off[f]..off[f + 1]).collect()
            };
            let rows = idx(0);
            let cols = if r == 2 { idx(1) } else { vec![0] };
            (DMatrix::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])]), r)
        }
    })
}

fn to_mat(t: &DenseTensor) -> (DMatrix<f64>, usize) {
    match t.rank() {
        0 => (DMatrix::from_element(1, 1, t.data()[0]), 0),
        1 => (DMatrix::from_column_slice(t.shape()[0], 1, t.data()), 1),
        _ => (DMatrix::from_row_slice(t.nrows(), t.ncols(), t.data()), 2),
    }
}

/// Evaluates `expr` on `cell` independently of the compiled plan.
pub fn evaluate(expr: &SlateExpr, cell: usize) -> Result<DenseTensor> {
    expr.axes()?;
    let (m, r) = eval(expr, cell)?;
    Ok(match r {
        0 => DenseTensor::scalar(m[(0, 0)]),
        1 => DenseTensor::vector(m.column(0).iter().copied().collect()),
        _ => {
            let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
            DenseTensor::from_rows(&rows)
        }
    })
}
