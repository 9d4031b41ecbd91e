use super::{FieldSplit, InnerSolve, InnerStats, Scpc};
use crate::error::{Error, Result};
use crate::fem::{break_space, create_space, ElementFamily, FunctionSpace, MixedSpace};
use crate::forms::{Expr, FormIR, IntegralTerm};
use crate::mesh::BoundaryLabel;
use crate::slate::{assemble_matrix, SlateExpr};
use crate::solvers::{CsrMatrix, Preconditioner};

/// Correspondence between a conforming RT space and its broken twin, where
/// each conforming dof owns one broken copy per adjacent cell.
#[derive(Debug, Clone)]
pub struct BrokenTransfer {
    owner: Vec<usize>,
    count: Vec<usize>,
}

impl BrokenTransfer {
    pub fn new(conforming: &FunctionSpace, broken: &FunctionSpace) -> Result<Self> {
        if conforming.family() != broken.family() || !broken.is_broken() || conforming.is_broken() {
            return Err(Error::InvalidSplit("transfer needs a conforming space and its broken counterpart".into()));
        }
        let mut owner = vec![0; broken.ndof()];
        let mut count = vec![0; conforming.ndof()];
        for c in 0..conforming.mesh().n_cells() {
            for (&b, &g) in broken.cell_dofs(c).iter().zip(conforming.cell_dofs(c)) {
                owner[b] = g;
                count[g] += 1;
            }
        }
        Ok(BrokenTransfer { owner, count })
    }

    /// Number of broken copies of each conforming dof.
    pub fn multiplicity(&self) -> &[usize] {
        &self.count
    }

    /// Conforming dof owning each broken dof.
    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    /// Splits a conforming residual evenly among the broken copies, so that
    /// summing the copies recovers it.
    pub fn transfer_residual(&self, r: &[f64]) -> Vec<f64> {
        self.owner.iter().map(|&g| r[g] / self.count[g] as f64).collect()
    }

    /// Averages broken copies into a conforming (normal-continuous) field.
    pub fn project_div(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count.len()];
        for (&g, v) in self.owner.iter().zip(x) {
            out[g] += v / self.count[g] as f64;
        }
        out
    }

    /// Copies conforming values onto every broken copy.
    pub fn inject(&self, x: &[f64]) -> Vec<f64> {
        self.owner.iter().map(|&g| x[g]).collect()
    }
}

/// Preconditioner for a conforming RT(k) x DG(k-1) system that solves the
/// equivalent hybridized problem on broken RT x DG x Trace(k-1) by static
/// condensation onto the trace.
///
/// The conforming operator is expected to carry identity rows on the Neumann
/// flux dofs (see [`HybridizationPc::constrained_operator`]).
pub struct HybridizationPc {
    space: MixedSpace,
    hybrid_space: MixedSpace,
    transfer: BrokenTransfer,
    scpc: Scpc,
    /// `(rt dof, trace dof, -sigma |e|)` on Neumann facets.
    neumann: Vec<(usize, usize, f64)>,
    setup_seconds: f64,
}

impl std::fmt::Debug for HybridizationPc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridizationPc").field("trace_dofs", &self.hybrid_space.field(2).ndof()).finish()
    }
}

impl HybridizationPc {
    pub fn new(operator: &FormIR, inner: InnerSolve) -> Result<Self> {
        let t = std::time::Instant::now();
        if operator.rank() != 2 || operator.arguments()[0].space != operator.arguments()[1].space {
            return Err(Error::InvalidSplit("hybridization needs a square bilinear form".into()));
        }
        let space = operator.arguments()[0].space.clone();
        let (rt, dg) = match space.fields() {
            [rt, dg] => (rt.clone(), dg.clone()),
            _ => return Err(Error::InvalidSplit("hybridization expects fields (RT, DG)".into())),
        };
        let k = match (rt.family(), dg.family()) {
            (ElementFamily::RT(k), ElementFamily::DG(j)) if j + 1 == k && !rt.is_broken() => k,
            (a, b) => return Err(Error::InvalidSplit(format!("hybridization expects conforming RT(k) x DG(k-1), got {a:?} x {b:?}"))),
        };
        let mesh = rt.mesh().clone();
        let broken = break_space(&rt)?;
        let trace = create_space(&mesh, ElementFamily::Trace(k - 1))?;
        let hybrid_space = MixedSpace::new(vec![broken.clone(), dg.clone(), trace.clone()]);

        let op = operator.replace_space(&rt, &broken)?.embed(&hybrid_space, &[0, 1], Some((&hybrid_space, &[0, 1])))?;
        let (w, g) = (Expr::test(0), Expr::trial(0));
        let couple = FormIR::bilinear(broken.clone(), trace.clone(), vec![IntegralTerm::all_facets(w.jump() * g.clone())])?.embed(
            &hybrid_space,
            &[0],
            Some((&hybrid_space, &[2])),
        )?;
        let constraint =
            FormIR::bilinear(trace.clone(), broken.clone(), vec![IntegralTerm::all_facets(-(Expr::test(0) * Expr::trial(0).jump()))])?
                .embed(&hybrid_space, &[2], Some((&hybrid_space, &[0])))?;
        let hybrid = SlateExpr::tensor(&FormIR::sum(&[op, couple, constraint])?);

        let dirichlet: Vec<usize> = mesh.facets_with_label(BoundaryLabel::Dirichlet).flat_map(|f| trace.facet_dofs(f).to_vec()).collect();
        let mut neumann = Vec::new();
        for f in mesh.facets_with_label(BoundaryLabel::Neumann) {
            let (c, e) = (mesh.facet_cells(f)[0], mesh.facet_local_index(f)[0]);
            let n_out = mesh.geometry(c).facet_normals[e];
            let n_g = mesh.facet_global_normal(f);
            let sigma = n_out[0] * n_g[0] + n_out[1] * n_g[1];
            for j in 0..k {
                neumann.push((f * k + j, trace.facet_dofs(f)[j], -sigma * mesh.facet_length(f)));
            }
        }
        let scpc = Scpc::new(&hybrid, FieldSplit { eliminate: vec![0, 1], condensed: vec![2] }, &dirichlet, inner)?;
        let transfer = BrokenTransfer::new(&rt, &broken)?;
        Ok(HybridizationPc { space, hybrid_space, transfer, scpc, neumann, setup_seconds: t.elapsed().as_secs_f64() })
    }

    /// RT dofs lying on Neumann facets.
    pub fn neumann_dofs(&self) -> Vec<usize> {
        self.neumann.iter().map(|n| n.0).collect()
    }

    /// Conforming operator with identity rows on the Neumann flux dofs.
    pub fn constrained_operator(&self, operator: &FormIR) -> Result<CsrMatrix> {
        let mut m = assemble_matrix(&SlateExpr::tensor(operator), &[])?;
        m.constrain_rows(&self.neumann_dofs());
        Ok(m)
    }

    pub fn space(&self) -> &MixedSpace {
        &self.space
    }

    pub fn hybrid_space(&self) -> &MixedSpace {
        &self.hybrid_space
    }

    pub fn transfer(&self) -> &BrokenTransfer {
        &self.transfer
    }

    pub fn condensation(&self) -> &Scpc {
        &self.scpc
    }

    pub fn setup_seconds(&self) -> f64 {
        self.setup_seconds
    }

    pub fn stats(&self) -> InnerStats {
        self.scpc.stats()
    }

    /// Element-level expressions evaluated for a conforming residual `r` and
    /// trace solution `x_c` (see [`Scpc::expressions`]).
    pub fn expressions(&self, r: &[f64], x_c: &[f64]) -> Result<Vec<(String, SlateExpr)>> {
        self.scpc.expressions(&self.hybrid_residual(r), x_c)
    }

    /// Maps a conforming residual to the hybridized right-hand side.
    pub fn hybrid_residual(&self, r: &[f64]) -> Vec<f64> {
        let n_rt = self.space.field(0).ndof();
        let (ru, rp) = r.split_at(n_rt);
        let mut ru = ru.to_vec();
        for &(i, _, _) in &self.neumann {
            ru[i] = 0.0;
        }
        let mut out = self.transfer.transfer_residual(&ru);
        out.extend_from_slice(rp);
        let mut rl = vec![0.0; self.hybrid_space.field(2).ndof()];
        for &(i, t, s) in &self.neumann {
            rl[t] = s * r[i];
        }
        out.extend(rl);
        out
    }
}

impl Preconditioner for HybridizationPc {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        if r.len() != self.space.ndof() || z.len() != r.len() {
            return Err(Error::DimensionMismatch { expected: self.space.ndof(), got: r.len() });
        }
        let x = self.scpc.solve(&self.hybrid_residual(r))?;
        let nb = self.hybrid_space.field(0).ndof();
        let n_rt = self.space.field(0).ndof();
        let u = self.transfer.project_div(&x[..nb]);
        z[..n_rt].copy_from_slice(&u);
        for &(i, _, _) in &self.neumann {
            z[i] = r[i];
        }
        z[n_rt..].copy_from_slice(&x[nb..nb + self.space.field(1).ndof()]);
        Ok(())
    }
}
