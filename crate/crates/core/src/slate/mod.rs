//! Expression language over element tensors.
//!
//! Expressions are built infallibly with operators and checked when compiled
//! into an [`ExecPlan`], which evaluates them cell by cell.

mod assemble;
#[cfg(feature = "oracle")]
pub mod oracle;
mod plan;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use assemble::{assemble_global, assemble_matrix, assemble_system, assemble_vector, Assembled, DirichletBC};
pub use plan::{compile, evaluate_cell, ExecPlan, Kernel};

use crate::dense::Factorization;
use crate::error::{Error, Result};
use crate::fem::{Function, MixedSpace};
use crate::forms::FormIR;

static NEXT_VECTOR_ID: AtomicUsize = AtomicUsize::new(0);

/// A global coefficient vector viewed cell by cell.
#[derive(Debug, Clone)]
pub struct AssembledVector {
    id: usize,
    space: MixedSpace,
    values: Arc<Vec<f64>>,
}

impl AssembledVector {
    pub fn new(space: MixedSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.ndof() {
            return Err(Error::DimensionMismatch { expected: space.ndof(), got: values.len() });
        }
        Ok(AssembledVector { id: NEXT_VECTOR_ID.fetch_add(1, Ordering::Relaxed), space, values: Arc::new(values) })
    }

    pub fn space(&self) -> &MixedSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Local coefficients on `cell`.
    pub fn gather(&self, cell: usize) -> Vec<f64> {
        self.space.cell_dofs(cell).into_iter().map(|d| self.values[d]).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Tensor(FormIR),
    Vector(AssembledVector),
    Add(SlateExpr, SlateExpr),
    Mul(SlateExpr, SlateExpr),
    Negate(SlateExpr),
    Transpose(SlateExpr),
    Inverse(SlateExpr),
    Solve(SlateExpr, SlateExpr, Factorization),
    /// Field subsets per axis of the operand's block structure.
    Blocks(SlateExpr, Vec<Vec<usize>>),
}

/// Expression over element tensors; cloning shares the subtree.
#[derive(Clone)]
pub struct SlateExpr(Arc<Node>);

impl fmt::Debug for SlateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Tensor(form) => write!(f, "Tensor(rank {})", form.rank()),
            Node::Vector(v) => write!(f, "AssembledVector(#{})", v.id),
            Node::Add(a, b) => write!(f, "Add({a:?}, {b:?})"),
            Node::Mul(a, b) => write!(f, "Mul({a:?}, {b:?})"),
            Node::Negate(a) => write!(f, "Negate({a:?})"),
            Node::Transpose(a) => write!(f, "Transpose({a:?})"),
            Node::Inverse(a) => write!(f, "Inverse({a:?})"),
            Node::Solve(a, b, k) => write!(f, "Solve({a:?}, {b:?}, {k:?})"),
            Node::Blocks(a, idx) => write!(f, "Blocks({a:?}, {idx:?})"),
        }
    }
}

impl SlateExpr {
    fn wrap(n: Node) -> Self {
        SlateExpr(Arc::new(n))
    }

    pub fn tensor(form: &FormIR) -> Self {
        Self::wrap(Node::Tensor(form.clone()))
    }

    pub fn vector(v: &AssembledVector) -> Self {
        Self::wrap(Node::Vector(v.clone()))
    }

    pub fn function(f: &Function) -> Self {
        let v = AssembledVector::new(MixedSpace::single(f.space().clone()), f.coeffs().to_vec()).expect("sizes agree");
        Self::vector(&v)
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn transpose(&self) -> Self {
        Self::wrap(Node::Transpose(self.clone()))
    }

    pub fn inv(&self) -> Self {
        Self::wrap(Node::Inverse(self.clone()))
    }

    /// `self^{-1} b` through a factorization (never an explicit inverse).
    pub fn solve(&self, b: &SlateExpr, kind: Factorization) -> Self {
        Self::wrap(Node::Solve(self.clone(), b.clone(), kind))
    }

    /// Sub-block over the listed fields of each axis.
    pub fn blocks(&self, fields: &[&[usize]]) -> Self {
        Self::wrap(Node::Blocks(self.clone(), fields.iter().map(|f| f.to_vec()).collect()))
    }

    /// Block of a rank-2 expression.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Self {
        self.blocks(&[rows, cols])
    }

    /// Per-axis spaces after shape checking.
    pub fn axes(&self) -> Result<Vec<MixedSpace>> {
        infer_axes(self)
    }

    pub fn rank(&self) -> Result<usize> {
        Ok(self.axes()?.len())
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn dims(axes: &[MixedSpace]) -> Vec<usize> {
    axes.iter().map(|a| a.local_dim()).collect()
}

pub(crate) fn infer_axes(e: &SlateExpr) -> Result<Vec<MixedSpace>> {
    let axes = match e.node() {
        Node::Tensor(f) => f.arguments().iter().map(|a| a.space.clone()).collect(),
        Node::Vector(v) => vec![v.space.clone()],
        Node::Add(a, b) => {
            let (x, y) = (infer_axes(a)?, infer_axes(b)?);
            if x != y {
                return Err(shape_err("add", format!("operands have shapes {:?} and {:?}", dims(&x), dims(&y))));
            }
            x
        }
        Node::Mul(a, b) => {
            let (x, y) = (infer_axes(a)?, infer_axes(b)?);
            if x.is_empty() {
                y
            } else if y.is_empty() {
                x
            } else {
                if x.last() != y.first() {
                    return Err(shape_err("mul", format!("cannot contract {:?} with {:?}", dims(&x), dims(&y))));
                }
                x[..x.len() - 1].iter().chain(&y[1..]).cloned().collect()
            }
        }
        Node::Negate(a) => infer_axes(a)?,
        Node::Transpose(a) => {
            let mut x = infer_axes(a)?;
            x.reverse();
            x
        }
        Node::Inverse(a) => {
            let x = infer_axes(a)?;
            if x.len() != 2 || x[0].local_dim() != x[1].local_dim() {
                return Err(shape_err("inverse", format!("operand of shape {:?} is not square", dims(&x))));
            }
            vec![x[1].clone(), x[0].clone()]
        }
        Node::Solve(a, b, _) => {
            let (x, y) = (infer_axes(a)?, infer_axes(b)?);
            if x.len() != 2 || x[0].local_dim() != x[1].local_dim() {
                return Err(shape_err("solve", format!("operator of shape {:?} is not square", dims(&x))));
            }
            if y.is_empty() || y[0] != x[0] {
                return Err(shape_err("solve", format!("right-hand side {:?} does not match operator {:?}", dims(&y), dims(&x))));
            }
            std::iter::once(x[1].clone()).chain(y[1..].iter().cloned()).collect()
        }
        Node::Blocks(a, fields) => {
            let x = infer_axes(a)?;
            if fields.len() != x.len() {
                return Err(shape_err("blocks", format!("{} index sets for a rank-{} operand", fields.len(), x.len())));
            }
            let mut out = Vec::new();
            for (ax, f) in x.iter().zip(fields) {
                let sorted = f.windows(2).all(|w| w[0] < w[1]);
                if f.is_empty() || !sorted || f.iter().any(|&i| i >= ax.n_fields()) {
                    return Err(shape_err("blocks", format!("field set {f:?} invalid for an axis with {} fields", ax.n_fields())));
                }
                out.push(ax.subspace(f));
            }
            out
        }
    };
    if axes.len() > 2 {
        return Err(Error::RankTooHigh(axes.len()));
    }
    Ok(axes)
}

impl Add for &SlateExpr {
    type Output = SlateExpr;
    fn add(self, rhs: &SlateExpr) -> SlateExpr {
        SlateExpr::wrap(Node::Add(self.clone(), rhs.clone()))
    }
}

impl Sub for &SlateExpr {
    type Output = SlateExpr;
    fn sub(self, rhs: &SlateExpr) -> SlateExpr {
        SlateExpr::wrap(Node::Add(self.clone(), -rhs))
    }
}

impl Mul for &SlateExpr {
    type Output = SlateExpr;
    fn mul(self, rhs: &SlateExpr) -> SlateExpr {
        SlateExpr::wrap(Node::Mul(self.clone(), rhs.clone()))
    }
}

impl Neg for &SlateExpr {
    type Output = SlateExpr;
    fn neg(self) -> SlateExpr {
        SlateExpr::wrap(Node::Negate(self.clone()))
    }
}

macro_rules! owned_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr for SlateExpr {
            type Output = SlateExpr;
            fn $f(self, rhs: SlateExpr) -> SlateExpr {
                (&self).$f(&rhs)
            }
        }
        impl $tr<&SlateExpr> for SlateExpr {
            type Output = SlateExpr;
            fn $f(self, rhs: &SlateExpr) -> SlateExpr {
                (&self).$f(rhs)
            }
        }
        impl $tr<SlateExpr> for &SlateExpr {
            type Output = SlateExpr;
            fn $f(self, rhs: SlateExpr) -> SlateExpr {
                self.$f(&rhs)
            }
        }
    )*};
}

owned_ops!(Add add, Sub sub, Mul mul);

impl Neg for SlateExpr {
    type Output = SlateExpr;
    fn neg(self) -> SlateExpr {
        -&self
    }
}
