//! Cell-local post-processing: a higher-degree scalar from a mixed or LDG-H
//! solution, and an H(div)-conforming flux from LDG-H numerical traces.

use crate::dense::Factorization;
use crate::error::{Error, Result};
use crate::fem::{broken_rt, create_space, eval_on_cell, ElementFamily, Function, FunctionSpace, MixedSpace};
use crate::forms::{Argument, Expr, Field, FormIR, IntegralTerm, Role};
use crate::mesh::CellGeometry;
use crate::slate::{assemble_vector, SlateExpr};

/// Scalar post-processing options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScalarPpConfig {
    /// Degree `l` of the multiplier enforcing `(phi, p* - p_h) = 0`; `0 <= l <= k`.
    pub multiplier_degree: usize,
}

fn scalar_degree(p: &Function) -> Result<usize> {
    match p.space().family() {
        ElementFamily::DG(k) => Ok(k),
        other => Err(Error::UnsupportedElement(format!("scalar post-processing needs a DG scalar, got {other:?}"))),
    }
}

/// Degree-(k+1) scalar `p*` on each cell solving
///
/// ```text
/// (grad w, grad p*) + (w, psi)   = -(grad w, kappa^{-1} u_h)
/// (phi, p*)                      = (phi, p_h)
/// ```
///
/// for all `w` in P_{k+1}(K), `phi` in P_l(K), where `k` is the degree of `p_h`.
pub fn scalar_pp(u_h: &Function, p_h: &Function, kappa: &Field, cfg: ScalarPpConfig) -> Result<Function> {
    let (target, expr) = scalar_pp_expr(u_h, p_h, kappa, cfg)?;
    Function::from_coeffs(&target, assemble_vector(&expr, &[])?)
}

/// Target space and cell-local expression of [`scalar_pp`].
pub fn scalar_pp_expr(u_h: &Function, p_h: &Function, kappa: &Field, cfg: ScalarPpConfig) -> Result<(FunctionSpace, SlateExpr)> {
    let k = scalar_degree(p_h)?;
    let l = cfg.multiplier_degree;
    if l > k {
        return Err(Error::InvalidConfig(format!("multiplier degree {l} exceeds the scalar degree {k}")));
    }
    if u_h.space().value_size() != 2 || u_h.space().family().is_trace() {
        return Err(Error::UnsupportedElement(format!("flux input must be vector valued, got {:?}", u_h.space().family())));
    }
    let mesh = p_h.space().mesh();
    if !std::sync::Arc::ptr_eq(mesh, u_h.space().mesh()) {
        return Err(Error::ShapeMismatch { op: "scalar_pp", detail: "inputs live on different meshes".into() });
    }
    let target = create_space(mesh, ElementFamily::DG(k + 1))?;
    let mult = create_space(mesh, ElementFamily::DG(l))?;
    let w = MixedSpace::new(vec![target.clone(), mult]);
    let (t, u) = (Expr::test, Expr::trial);
    let a = FormIR::bilinear(w.clone(), w.clone(), vec![IntegralTerm::cell(t(0).grad().dot(u(0).grad()) + t(0) * u(1) + t(1) * u(0))])?;
    let kinv = {
        let k = kappa.clone();
        Field::scalar("1/kappa", k.degree(), move |x| 1.0 / k.eval(x)[0])
    };
    let rhs = FormIR::new(
        vec![Argument { role: Role::Test, space: w }],
        vec![u_h.clone(), p_h.clone()],
        vec![IntegralTerm::cell(-(Expr::field(kinv) * t(0).grad().dot(Expr::coef(0))) + t(1) * Expr::coef(1))],
    )?;
    let sol = SlateExpr::tensor(&a).solve(&SlateExpr::tensor(&rhs), Factorization::PartialPivLu);
    Ok((target, sol.blocks(&[&[0]])))
}

/// H(div)-conforming flux `u*` in broken RT(k+1) from an LDG-H solution of degree `k`:
///
/// ```text
/// <gamma, u*.n>_e = <gamma, u_h.n + tau (p_h - lambda_h)>_e   gamma in P_k(e), each facet e of K
/// (v, u*)_K       = (v, u_h)_K                                v in [P_{k-1}(K)]^2
/// ```
///
/// For `k = 0` only the facet moments apply.
pub fn flux_pp(u_h: &Function, p_h: &Function, lambda_h: &Function, tau: &Field) -> Result<Function> {
    let (target, expr) = flux_pp_expr(u_h, p_h, lambda_h, tau)?;
    Function::from_coeffs(&target, assemble_vector(&expr, &[])?)
}

/// Target space and cell-local expression of [`flux_pp`].
pub fn flux_pp_expr(u_h: &Function, p_h: &Function, lambda_h: &Function, tau: &Field) -> Result<(FunctionSpace, SlateExpr)> {
    let k = scalar_degree(p_h)?;
    match (u_h.space().family(), lambda_h.space().family()) {
        (ElementFamily::VectorDG(a), ElementFamily::Trace(b)) if a == k && b == k => {}
        (a, b) => {
            return Err(Error::UnsupportedElement(format!(
                "flux post-processing expects VectorDG({k}) x DG({k}) x Trace({k}), got {a:?} and {b:?}"
            )))
        }
    }
    let mesh = p_h.space().mesh();
    let target = broken_rt(mesh, k + 1)?;
    let trace = lambda_h.space().clone();
    let mut test_fields = vec![trace];
    if k > 0 {
        test_fields.push(create_space(mesh, ElementFamily::VectorDG(k - 1))?);
    }
    let test = MixedSpace::new(test_fields);
    let (t, u) = (Expr::test, Expr::trial);
    let mut terms = vec![IntegralTerm::all_facets(t(0) * u(0).normal_component())];
    let flux = Expr::coef(0).normal_component() + Expr::field(tau.clone()) * (Expr::coef(1) - Expr::coef(2));
    let mut rhs_terms = vec![IntegralTerm::all_facets(t(0) * flux)];
    if k > 0 {
        terms.push(IntegralTerm::cell(t(1).dot(u(0))));
        rhs_terms.push(IntegralTerm::cell(t(1).dot(Expr::coef(0))));
    }
    let a = FormIR::bilinear(test.clone(), target.clone(), terms)?;
    let rhs = FormIR::new(vec![Argument { role: Role::Test, space: test }], vec![u_h.clone(), p_h.clone(), lambda_h.clone()], rhs_terms)?;
    Ok((target, SlateExpr::tensor(&a).solve(&SlateExpr::tensor(&rhs), Factorization::PartialPivLu)))
}

/// Reference coordinates of the physical point `x` in a cell.
pub fn reference_coords(geom: &CellGeometry, x: [f64; 2]) -> [f64; 2] {
    let d = [x[0] - geom.origin[0], x[1] - geom.origin[1]];
    let m = &geom.inv_jt;
    [m[0][0] * d[0] + m[1][0] * d[1], m[0][1] * d[0] + m[1][1] * d[1]]
}

/// Largest `|u+.n + u-.n|` over sample points of all interior facets.
pub fn max_normal_jump(u: &Function) -> Result<f64> {
    if u.space().value_size() != 2 || u.space().family().is_trace() {
        return Err(Error::UnsupportedElement("normal jump needs a vector field".into()));
    }
    let mesh = u.space().mesh();
    let samples = [0.0, 0.1127016653792583, 0.5, 0.8872983346207417, 1.0];
    let mut worst: f64 = 0.0;
    for f in mesh.interior_facets() {
        let [a, b] = mesh.facet_vertices(f);
        let (pa, pb) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
        let n = mesh.facet_global_normal(f);
        let mut sum = vec![0.0; samples.len()];
        for (side, &c) in mesh.facet_cells(f).iter().enumerate() {
            let geom = mesh.cell_geometry(c)?;
            let e = mesh.facet_local_index(f)[side];
            let no = geom.facet_normals[e];
            let sign = if no[0] * n[0] + no[1] * n[1] > 0.0 { 1.0 } else { -1.0 };
            let pts: Vec<[f64; 2]> =
                samples.iter().map(|&s| reference_coords(&geom, [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])])).collect();
            let (vals, _, _) = eval_on_cell(u, c, &pts);
            for (q, acc) in sum.iter_mut().enumerate() {
                *acc += sign * (vals[2 * q] * n[0] + vals[2 * q + 1] * n[1]);
            }
        }
        worst = sum.iter().fold(worst, |m, v: &f64| m.max(v.abs()));
    }
    Ok(worst)
}
