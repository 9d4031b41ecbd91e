//! Block forms of the model elliptic problem
//! `u + kappa grad p = 0`, `div u + c p = f`, `p = p0` on Dirichlet facets,
//! `u . n = g` on Neumann facets.

use std::sync::Arc;

use super::{Argument, Expr, Field, FormIR, IntegralTerm, Role};
use crate::error::{Error, Result};
use crate::fem::element::legendre;
use crate::fem::quadrature::{quadrature, QuadratureKind, MAX_EXACTNESS};
use crate::fem::space::broken_rt;
use crate::fem::{create_space, ElementFamily, FunctionSpace, MixedSpace};
use crate::mesh::{BoundaryLabel, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Hybridized RT(k) x DG(k-1) x Trace(k-1).
    MixedHybrid,
    /// VectorDG(k) x DG(k) x Trace(k) with flux `u + tau (p - lambda) n`.
    Ldgh,
    /// CG(k) primal formulation.
    CgPrimal,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed-hybrid" => Ok(Method::MixedHybrid),
            "ldgh" => Ok(Method::Ldgh),
            "cg-primal" => Ok(Method::CgPrimal),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::MixedHybrid => "mixed-hybrid",
            Method::Ldgh => "ldgh",
            Method::CgPrimal => "cg-primal",
        })
    }
}

/// Coefficients and data of the model problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub kappa: Field,
    pub c: Field,
    pub f: Field,
    pub p0: Field,
    /// Prescribed outward normal flux `u . n` on Neumann facets.
    pub g: Field,
    /// LDG-H stabilization (ignored by other methods).
    pub tau: Field,
}

impl ProblemData {
    fn mu(&self) -> Field {
        let k = self.kappa.clone();
        Field::scalar("1/kappa", k.degree(), move |x| 1.0 / k.eval(x)[0])
    }
}

/// The 3-field block forms `A_ij`, `F_i` with fields ordered `(u, p, lambda)`.
/// Blocks carry the textbook signs; [`ModelForms::system_operator`] negates the
/// trace rows so that the condensed trace operator is positive definite.
#[derive(Debug, Clone)]
pub struct ModelForms {
    pub method: Method,
    pub degree: usize,
    pub spaces: Vec<FunctionSpace>,
    pub blocks: [[Option<FormIR>; 3]; 3],
    pub rhs: [Option<FormIR>; 3],
}

fn t(i: usize) -> Expr {
    Expr::test(i)
}

fn u(i: usize) -> Expr {
    Expr::trial(i)
}

fn fld(f: &Field) -> Expr {
    Expr::field(f.clone())
}

/// Load vectors carry closed-form data, so they use the largest rule. Every
/// discretization then integrates the same data identically.
fn load(test: impl Into<MixedSpace>, terms: Vec<IntegralTerm>) -> Result<FormIR> {
    FormIR::with_quadrature(vec![Argument { role: Role::Test, space: test.into() }], vec![], terms, MAX_EXACTNESS)
}

/// Builds the block forms for `method` at degree `k`.
pub fn model_problem_forms(mesh: &Arc<Mesh>, data: &ProblemData, method: Method, k: usize) -> Result<ModelForms> {
    let (vel, pres, trace) = match method {
        Method::MixedHybrid => {
            if !(1..=2).contains(&k) {
                return Err(Error::UnsupportedElement(format!("mixed-hybrid degree {k} (supported: 1, 2)")));
            }
            (broken_rt(mesh, k)?, create_space(mesh, ElementFamily::DG(k - 1))?, create_space(mesh, ElementFamily::Trace(k - 1))?)
        }
        Method::Ldgh => {
            if k > 2 {
                return Err(Error::UnsupportedElement(format!("ldgh degree {k} (supported: 0..=2)")));
            }
            (
                create_space(mesh, ElementFamily::VectorDG(k))?,
                create_space(mesh, ElementFamily::DG(k))?,
                create_space(mesh, ElementFamily::Trace(k))?,
            )
        }
        Method::CgPrimal => return Err(Error::InvalidConfig("cg-primal has no hybrid block structure; use primal_forms".into())),
    };
    let mu = data.mu();
    let b = |test: &FunctionSpace, trial: &FunctionSpace, terms: Vec<IntegralTerm>| {
        FormIR::bilinear(test.clone(), trial.clone(), terms).map(Some)
    };
    let l = |test: &FunctionSpace, terms: Vec<IntegralTerm>| load(test.clone(), terms).map(Some);
    let neumann = Some(BoundaryLabel::Neumann);
    let has_neumann = mesh.facets_with_label(BoundaryLabel::Neumann).next().is_some();

    let a00 = b(&vel, &vel, vec![IntegralTerm::cell(fld(&mu) * t(0).dot(u(0)))])?;
    let a01 = b(&vel, &pres, vec![IntegralTerm::cell(-(t(0).div() * u(0)))])?;
    let a02 = b(&vel, &trace, vec![IntegralTerm::all_facets(t(0).jump() * u(0))])?;
    let a20 = b(&trace, &vel, vec![IntegralTerm::all_facets(t(0) * u(0).jump())])?;
    let f1 = l(&pres, vec![IntegralTerm::cell(t(0) * fld(&data.f))])?;
    let f2 = if has_neumann { l(&trace, vec![IntegralTerm::exterior_facet(neumann, t(0) * fld(&data.g))])? } else { None };

    let blocks = match method {
        Method::MixedHybrid => [
            [a00, a01, a02],
            [
                b(&pres, &vel, vec![IntegralTerm::cell(t(0) * u(0).div())])?,
                b(&pres, &pres, vec![IntegralTerm::cell(fld(&data.c) * t(0) * u(0))])?,
                None,
            ],
            [a20, None, None],
        ],
        _ => {
            let tau = &data.tau;
            [
                [a00, a01, a02],
                [
                    b(
                        &pres,
                        &vel,
                        vec![IntegralTerm::cell(-(t(0).grad().dot(u(0)))), IntegralTerm::all_facets(t(0) * u(0).normal_component())],
                    )?,
                    b(
                        &pres,
                        &pres,
                        vec![IntegralTerm::cell(fld(&data.c) * t(0) * u(0)), IntegralTerm::all_facets(fld(tau) * t(0) * u(0))],
                    )?,
                    b(&pres, &trace, vec![IntegralTerm::all_facets(-(fld(tau) * t(0) * u(0)))])?,
                ],
                [
                    a20,
                    b(&trace, &pres, vec![IntegralTerm::all_facets(fld(tau) * t(0) * u(0))])?,
                    b(&trace, &trace, vec![IntegralTerm::all_facets(-(fld(tau) * t(0) * u(0)))])?,
                ],
            ]
        }
    };
    Ok(ModelForms { method, degree: k, spaces: vec![vel, pres, trace], blocks, rhs: [None, f1, f2] })
}

impl ModelForms {
    pub fn mixed_space(&self) -> MixedSpace {
        MixedSpace::new(self.spaces.clone())
    }

    /// Sign applied to row `i` when forming the monolithic system.
    pub fn row_sign(i: usize) -> f64 {
        if i == 2 {
            -1.0
        } else {
            1.0
        }
    }

    /// Monolithic 3-field operator with negated trace rows.
    pub fn system_operator(&self) -> Result<FormIR> {
        let w = self.mixed_space();
        let mut parts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if let Some(f) = &self.blocks[i][j] {
                    parts.push(f.scaled(Self::row_sign(i))?.embed(&w, &[i], Some((&w, &[j])))?);
                }
            }
        }
        FormIR::sum(&parts)
    }

    /// Monolithic right-hand side matching [`ModelForms::system_operator`].
    /// Returns `None` when every block is zero.
    pub fn system_rhs(&self) -> Result<Option<FormIR>> {
        let w = self.mixed_space();
        let mut parts = Vec::new();
        for i in 0..3 {
            if let Some(f) = &self.rhs[i] {
                parts.push(f.scaled(Self::row_sign(i))?.embed(&w, &[i], None)?);
            }
        }
        if parts.is_empty() {
            Ok(None)
        } else {
            FormIR::sum(&parts).map(Some)
        }
    }
}

/// Conforming mixed system over RT(k) x DG(k-1) (Neumann flux dofs are essential).
#[derive(Debug, Clone)]
pub struct ConformingMixed {
    pub space: MixedSpace,
    pub operator: FormIR,
    pub rhs: FormIR,
}

pub fn conforming_mixed_forms(mesh: &Arc<Mesh>, data: &ProblemData, k: usize) -> Result<ConformingMixed> {
    if !(1..=2).contains(&k) {
        return Err(Error::UnsupportedElement(format!("mixed degree {k} (supported: 1, 2)")));
    }
    let rt = create_space(mesh, ElementFamily::RT(k))?;
    let dg = create_space(mesh, ElementFamily::DG(k - 1))?;
    let w = MixedSpace::new(vec![rt, dg]);
    let mu = data.mu();
    let operator = FormIR::bilinear(
        w.clone(),
        w.clone(),
        vec![
            IntegralTerm::cell(fld(&mu) * t(0).dot(u(0))),
            IntegralTerm::cell(-(t(0).div() * u(1))),
            IntegralTerm::cell(t(1) * u(0).div()),
            IntegralTerm::cell(fld(&data.c) * t(1) * u(1)),
        ],
    )?;
    let mut terms = vec![IntegralTerm::cell(t(1) * fld(&data.f))];
    if mesh.facets_with_label(BoundaryLabel::Dirichlet).next().is_some() {
        terms.push(IntegralTerm::exterior_facet(Some(BoundaryLabel::Dirichlet), -(t(0).normal_component() * fld(&data.p0))));
    }
    let rhs = load(w.clone(), terms)?;
    Ok(ConformingMixed { space: w, operator, rhs })
}

/// Values of the RT dofs on Neumann facets implied by `u . n = g`:
/// `(1/|e|) int_e (n_out . n_e) g L_j`.
pub fn neumann_flux_dofs(rt: &FunctionSpace, g: &Field) -> Result<(Vec<usize>, Vec<f64>)> {
    let ElementFamily::RT(k) = rt.family() else {
        return Err(Error::UnsupportedElement("Neumann flux dofs need an RT space".into()));
    };
    let mesh = rt.mesh();
    let rule = quadrature(QuadratureKind::Edge, MAX_EXACTNESS)?;
    let (mut dofs, mut vals) = (Vec::new(), Vec::new());
    for f in mesh.facets_with_label(BoundaryLabel::Neumann) {
        let c = mesh.facet_cells(f)[0];
        let e = mesh.facet_local_index(f)[0];
        let n_out = mesh.geometry(c).facet_normals[e];
        let n_g = mesh.facet_global_normal(f);
        let sigma = n_out[0] * n_g[0] + n_out[1] * n_g[1];
        let [a, b] = mesh.facet_vertices(f);
        let (pa, pb) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
        for j in 0..k {
            let mut s = 0.0;
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let x = [pa[0] + q[0] * (pb[0] - pa[0]), pa[1] + q[0] * (pb[1] - pa[1])];
                s += w * g.eval(x)[0] * legendre(k - 1, q[0])[j];
            }
            dofs.push(f * k + j);
            vals.push(sigma * s);
        }
    }
    Ok((dofs, vals))
}

/// Primal CG(k) forms `(grad v, kappa grad p) + (v, c p) = (v, f) - <v, g>_N`.
pub fn primal_forms(mesh: &Arc<Mesh>, data: &ProblemData, k: usize) -> Result<(FunctionSpace, FormIR, FormIR)> {
    let s = create_space(mesh, ElementFamily::CG(k))?;
    let a = FormIR::bilinear(
        s.clone(),
        s.clone(),
        vec![IntegralTerm::cell(fld(&data.kappa) * t(0).grad().dot(u(0).grad())), IntegralTerm::cell(fld(&data.c) * t(0) * u(0))],
    )?;
    let mut terms = vec![IntegralTerm::cell(t(0) * fld(&data.f))];
    if mesh.facets_with_label(BoundaryLabel::Neumann).next().is_some() {
        terms.push(IntegralTerm::exterior_facet(Some(BoundaryLabel::Neumann), -(t(0) * fld(&data.g))));
    }
    let l = load(s.clone(), terms)?;
    Ok((s, a, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::assemble_local;
    use crate::mesh::build_unit_square;

    fn data() -> ProblemData {
        ProblemData {
            kappa: Field::constant(1.0),
            c: Field::constant(1.0),
            f: Field::constant(1.0),
            p0: Field::constant(0.0),
            g: Field::constant(0.0),
            tau: Field::constant(1.0),
        }
    }

    #[test]
    fn mixed_hybrid_has_no_trace_self_coupling() {
        let m = Arc::new(build_unit_square(2).unwrap());
        let f = model_problem_forms(&m, &data(), Method::MixedHybrid, 1).unwrap();
        assert!(f.blocks[2][2].is_none());
        assert!(f.blocks[1][2].is_none() && f.blocks[2][1].is_none());
        assert_eq!(f.spaces[0].family(), ElementFamily::RT(1));
        assert!(f.spaces[0].is_broken());
    }

    #[test]
    fn ldgh_trace_block_is_minus_tau_length() {
        let m = Arc::new(build_unit_square(1).unwrap());
        let f = model_problem_forms(&m, &data(), Method::Ldgh, 0).unwrap();
        let a22 = f.blocks[2][2].as_ref().unwrap();
        let interior = m.interior_facets().next().unwrap();
        let len = m.facet_length(interior);
        let tr = &f.spaces[2];
        let mut total = 0.0;
        for &c in m.facet_cells(interior) {
            let t = assemble_local(a22, c).unwrap();
            let e = m.facet_local_index(interior)[m.facet_cells(interior).iter().position(|&x| x == c).unwrap()];
            assert!((t.get(e, e) + len).abs() < 1e-14);
            assert_eq!(tr.cell_dofs(c)[e], interior);
            total += t.get(e, e);
        }
        assert!((total + 2.0 * len).abs() < 1e-14);
    }

    #[test]
    fn neumann_rhs_only_on_neumann_facets() {
        let m = Arc::new(
            build_unit_square(2)
                .unwrap()
                .mark_boundary(|x| Some(if x[0] < 1e-12 { BoundaryLabel::Neumann } else { BoundaryLabel::Dirichlet }))
                .unwrap(),
        );
        let mut d = data();
        d.g = Field::constant(1.0);
        let f = model_problem_forms(&m, &d, Method::MixedHybrid, 1).unwrap();
        let f2 = f.rhs[2].as_ref().unwrap();
        let tr = &f.spaces[2];
        let mut global = vec![0.0; tr.ndof()];
        for c in 0..m.n_cells() {
            let t = assemble_local(f2, c).unwrap();
            for (i, &dof) in tr.cell_dofs(c).iter().enumerate() {
                global[dof] += t.data()[i];
            }
        }
        for fa in 0..m.n_facets() {
            let want = if m.exterior_label(fa) == Some(BoundaryLabel::Neumann) { m.facet_length(fa) } else { 0.0 };
            assert!((global[fa] - want).abs() < 1e-14);
        }
        let d0 = data();
        let f0 = model_problem_forms(&m, &d0, Method::MixedHybrid, 1).unwrap();
        let z = f0.rhs[2].as_ref().unwrap();
        assert!((0..m.n_cells()).all(|c| assemble_local(z, c).unwrap().max_abs() == 0.0));
    }

    #[test]
    fn system_operator_negates_trace_rows() {
        let m = Arc::new(build_unit_square(2).unwrap());
        let f = model_problem_forms(&m, &data(), Method::Ldgh, 1).unwrap();
        let a = f.system_operator().unwrap();
        let off = f.mixed_space().local_offsets();
        for c in [0, 5] {
            let full = assemble_local(&a, c).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let blk = assemble_local(f.blocks[i][j].as_ref().unwrap(), c).unwrap();
                    for r in 0..blk.nrows() {
                        for s in 0..blk.ncols() {
                            let want = ModelForms::row_sign(i) * blk.get(r, s);
                            assert!((full.get(off[i] + r, off[j] + s) - want).abs() < 1e-14);
                        }
                    }
                }
            }
        }
    }
}
