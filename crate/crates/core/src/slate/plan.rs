use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::sync::Arc;

use super::{infer_axes, AssembledVector, Node, SlateExpr};
use crate::dense::{dense_factor_solve, DenseTensor, Factorization};
use crate::error::{Error, Result};
use crate::fem::MixedSpace;
use crate::forms::{assemble_local, FormIR};
use crate::mesh::Mesh;

/// One step of an execution plan; operands and results are register indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    AssembleForm { out: usize, form: usize },
    GatherVector { out: usize, vector: usize },
    Add { out: usize, a: usize, b: usize },
    Gemm { out: usize, a: usize, b: usize },
    Negate { out: usize, a: usize },
    Transpose { out: usize, a: usize },
    FactorSolve { out: usize, a: usize, b: usize, kind: Factorization },
    Invert { out: usize, a: usize },
    Slice { out: usize, a: usize, ranges: Vec<Vec<Range<usize>>> },
}

impl Kernel {
    pub fn output(&self) -> usize {
        match *self {
            Kernel::AssembleForm { out, .. }
            | Kernel::GatherVector { out, .. }
            | Kernel::Add { out, .. }
            | Kernel::Gemm { out, .. }
            | Kernel::Negate { out, .. }
            | Kernel::Transpose { out, .. }
            | Kernel::FactorSolve { out, .. }
            | Kernel::Invert { out, .. }
            | Kernel::Slice { out, .. } => out,
        }
    }
}

/// Straight-line program evaluating an expression on one cell.
#[derive(Debug, Clone)]
pub struct ExecPlan {
    kernels: Vec<Kernel>,
    shapes: Vec<Vec<usize>>,
    blocks: Vec<Vec<Vec<usize>>>,
    forms: Vec<FormIR>,
    vectors: Vec<AssembledVector>,
    axes: Vec<MixedSpace>,
    output: usize,
    mesh: Arc<Mesh>,
}

#[derive(Hash, PartialEq, Eq)]
enum Key {
    Form(usize),
    Vector(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Trans(usize),
    Inv(usize),
    Solve(usize, usize, Factorization),
    Blocks(usize, Vec<Vec<usize>>),
}

struct Builder {
    plan_kernels: Vec<Kernel>,
    shapes: Vec<Vec<usize>>,
    blocks: Vec<Vec<Vec<usize>>>,
    forms: Vec<FormIR>,
    vectors: Vec<AssembledVector>,
    by_key: HashMap<Key, usize>,
    by_ptr: HashMap<usize, (usize, Vec<MixedSpace>)>,
}

impl Builder {
    fn emit(&mut self, key: Key, axes: &[MixedSpace], make: impl FnOnce(usize, &mut Self) -> Kernel) -> usize {
        if let Some(&r) = self.by_key.get(&key) {
            return r;
        }
        let out = self.shapes.len();
        self.shapes.push(axes.iter().map(|a| a.local_dim()).collect());
        self.blocks.push(axes.iter().map(|a| a.local_offsets()).collect());
        let k = make(out, self);
        self.plan_kernels.push(k);
        self.by_key.insert(key, out);
        out
    }

    fn visit(&mut self, e: &SlateExpr) -> Result<(usize, Vec<MixedSpace>)> {
        if let Some(hit) = self.by_ptr.get(&e.ptr_id()) {
            return Ok(hit.clone());
        }
        let axes = infer_axes(e)?;
        let reg = match e.node() {
            Node::Tensor(f) => {
                let id = f.id();
                self.emit(Key::Form(id), &axes, |out, b| {
                    b.forms.push(f.clone());
                    Kernel::AssembleForm { out, form: b.forms.len() - 1 }
                })
            }
            Node::Vector(v) => self.emit(Key::Vector(v.id()), &axes, |out, b| {
                b.vectors.push(v.clone());
                Kernel::GatherVector { out, vector: b.vectors.len() - 1 }
            }),
            Node::Add(x, y) => {
                let (a, b) = (self.visit(x)?.0, self.visit(y)?.0);
                // addition commutes, so order operands for sharing
                let (a, b) = (a.min(b), a.max(b));
                self.emit(Key::Add(a, b), &axes, |out, _| Kernel::Add { out, a, b })
            }
            Node::Mul(x, y) => {
                let (a, b) = (self.visit(x)?.0, self.visit(y)?.0);
                self.emit(Key::Mul(a, b), &axes, |out, _| Kernel::Gemm { out, a, b })
            }
            Node::Negate(x) => {
                let a = self.visit(x)?.0;
                self.emit(Key::Neg(a), &axes, |out, _| Kernel::Negate { out, a })
            }
            Node::Transpose(x) => {
                let a = self.visit(x)?.0;
                self.emit(Key::Trans(a), &axes, |out, _| Kernel::Transpose { out, a })
            }
            Node::Inverse(x) => {
                let a = self.visit(x)?.0;
                self.emit(Key::Inv(a), &axes, |out, _| Kernel::Invert { out, a })
            }
            Node::Solve(x, y, kind) => {
                let (a, b) = (self.visit(x)?.0, self.visit(y)?.0);
                let kind = *kind;
                self.emit(Key::Solve(a, b, kind), &axes, |out, _| Kernel::FactorSolve { out, a, b, kind })
            }
            Node::Blocks(x, fields) => {
                let (a, parent) = self.visit(x)?;
                let ranges: Vec<Vec<Range<usize>>> = parent
                    .iter()
                    .zip(fields)
                    .map(|(ax, f)| {
                        let off = ax.local_offsets();
                        f.iter().map(|&i| off[i]..off[i + 1]).collect()
                    })
                    .collect();
                self.emit(Key::Blocks(a, fields.clone()), &axes, |out, _| Kernel::Slice { out, a, ranges })
            }
        };
        self.by_ptr.insert(e.ptr_id(), (reg, axes.clone()));
        Ok((reg, axes))
    }
}

fn collect_mesh(e: &SlateExpr) -> Option<Arc<Mesh>> {
    match e.node() {
        Node::Tensor(f) => Some(f.mesh().clone()),
        Node::Vector(v) => Some(v.space().mesh().clone()),
        Node::Add(a, b) | Node::Mul(a, b) | Node::Solve(a, b, _) => collect_mesh(a).or_else(|| collect_mesh(b)),
        Node::Negate(a) | Node::Transpose(a) | Node::Inverse(a) | Node::Blocks(a, _) => collect_mesh(a),
    }
}

fn check_meshes(e: &SlateExpr, mesh: &Arc<Mesh>) -> Result<()> {
    let ok = |m: &Arc<Mesh>| Arc::ptr_eq(m, mesh);
    match e.node() {
        Node::Tensor(f) => {
            if !ok(f.mesh()) {
                return Err(Error::ShapeMismatch { op: "tensor", detail: "operands live on different meshes".into() });
            }
        }
        Node::Vector(v) => {
            if !ok(v.space().mesh()) {
                return Err(Error::ShapeMismatch { op: "vector", detail: "operands live on different meshes".into() });
            }
        }
        Node::Add(a, b) | Node::Mul(a, b) | Node::Solve(a, b, _) => {
            check_meshes(a, mesh)?;
            check_meshes(b, mesh)?;
        }
        Node::Negate(a) | Node::Transpose(a) | Node::Inverse(a) | Node::Blocks(a, _) => check_meshes(a, mesh)?,
    }
    Ok(())
}

/// Lowers an expression to a plan; equal subexpressions are evaluated once.
pub fn compile(expr: &SlateExpr) -> Result<ExecPlan> {
    let mesh = collect_mesh(expr).expect("every expression has a terminal");
    check_meshes(expr, &mesh)?;
    let mut b = Builder {
        plan_kernels: Vec::new(),
        shapes: Vec::new(),
        blocks: Vec::new(),
        forms: Vec::new(),
        vectors: Vec::new(),
        by_key: HashMap::new(),
        by_ptr: HashMap::new(),
    };
    let (output, axes) = b.visit(expr)?;
    Ok(ExecPlan { kernels: b.plan_kernels, shapes: b.shapes, blocks: b.blocks, forms: b.forms, vectors: b.vectors, axes, output, mesh })
}

impl ExecPlan {
    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn n_registers(&self) -> usize {
        self.shapes.len()
    }

    pub fn output_register(&self) -> usize {
        self.output
    }

    /// Spaces indexing each axis of the result.
    pub fn axes(&self) -> &[MixedSpace] {
        &self.axes
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[self.output_register()]
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn forms(&self) -> &[FormIR] {
        &self.forms
    }

    /// Stable textual listing of the kernels.
    pub fn dump(&self) -> String {
        self.to_string()
    }

    pub fn evaluate(&self, cell: usize) -> Result<DenseTensor> {
        evaluate_cell(self, cell)
    }
}

impl fmt::Display for ExecPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "plan: {} kernels, output r{}", self.kernels.len(), self.output_register())?;
        for k in &self.kernels {
            let mut line = String::new();
            let out = k.output();
            let _ = match k {
                Kernel::AssembleForm { form, .. } => write!(line, "assemble form{form}"),
                Kernel::GatherVector { vector, .. } => write!(line, "gather vec{vector}"),
                Kernel::Add { a, b, .. } => write!(line, "add r{a} r{b}"),
                Kernel::Gemm { a, b, .. } => write!(line, "gemm r{a} r{b}"),
                Kernel::Negate { a, .. } => write!(line, "neg r{a}"),
                Kernel::Transpose { a, .. } => write!(line, "transpose r{a}"),
                Kernel::FactorSolve { a, b, kind, .. } => {
                    let k = match kind {
                        Factorization::PartialPivLu => "lu",
                        Factorization::Cholesky => "cholesky",
                    };
                    write!(line, "solve[{k}] r{a} r{b}")
                }
                Kernel::Invert { a, .. } => write!(line, "invert r{a}"),
                Kernel::Slice { a, ranges, .. } => {
                    let r: Vec<String> = ranges
                        .iter()
                        .map(|ax| ax.iter().map(|r| format!("{}..{}", r.start, r.end)).collect::<Vec<_>>().join(","))
                        .collect();
                    write!(line, "slice r{a} [{}]", r.join("; "))
                }
            };
            let shape: Vec<String> = self.shapes[out].iter().map(|d| d.to_string()).collect();
            writeln!(f, "  r{out} = {line} : [{}]", shape.join("x"))?;
        }
        Ok(())
    }
}

fn localize(err: Error, cell: usize) -> Error {
    match err {
        Error::Singular { row, pivot } => Error::SingularLocal { cell, row, pivot },
        Error::NotPositiveDefinite { row, pivot } => Error::SingularLocal { cell, row, pivot },
        other => other,
    }
}

fn get(regs: &[Option<DenseTensor>], r: usize) -> &DenseTensor {
    regs[r].as_ref().expect("register computed before use")
}

/// Runs the plan on one cell and returns the block-tagged element tensor.
pub fn evaluate_cell(plan: &ExecPlan, cell: usize) -> Result<DenseTensor> {
    if cell >= plan.mesh.n_cells() {
        return Err(Error::OutOfRange { index: cell, len: plan.mesh.n_cells() });
    }
    let mut regs: Vec<Option<DenseTensor>> = vec![None; plan.shapes.len()];
    for k in &plan.kernels {
        let out = k.output();
        let t = match k {
            Kernel::AssembleForm { form, .. } => assemble_local(&plan.forms[*form], cell)?,
            Kernel::GatherVector { vector, .. } => DenseTensor::vector(plan.vectors[*vector].gather(cell)),
            Kernel::Add { a, b, .. } => get(&regs, *a).add(get(&regs, *b))?,
            Kernel::Gemm { a, b, .. } => get(&regs, *a).contract(get(&regs, *b))?,
            Kernel::Negate { a, .. } => get(&regs, *a).neg(),
            Kernel::Transpose { a, .. } => get(&regs, *a).transpose(),
            Kernel::FactorSolve { a, b, kind, .. } => {
                dense_factor_solve(get(&regs, *a), get(&regs, *b), *kind).map_err(|e| localize(e, cell))?
            }
            Kernel::Invert { a, .. } => get(&regs, *a).inverse().map_err(|e| localize(e, cell))?,
            Kernel::Slice { a, ranges, .. } => get(&regs, *a).gather(ranges),
        };
        let t = if t.rank() > 0 { t.with_blocks(plan.blocks[out].clone()) } else { t };
        regs[out] = Some(t);
    }
    Ok(regs.swap_remove(plan.output_register()).expect("output computed"))
}
