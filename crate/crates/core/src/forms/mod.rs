//! Multilinear forms over a closed integrand vocabulary and their cell-local
//! evaluation.

mod expr;
pub mod model;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

pub use expr::{Expr, Field};
pub use model::{
    conforming_mixed_forms, model_problem_forms, neumann_flux_dofs, primal_forms, ConformingMixed, Method, ModelForms, ProblemData,
};

use crate::dense::DenseTensor;
use crate::error::{Error, Result};
use crate::fem::element::ElementFamily;
use crate::fem::quadrature::{quadrature, QuadratureKind, QuadratureRule, MAX_EXACTNESS};
use crate::fem::space::{edge_points, physical_basis, trace_basis_on_edge, Function, FunctionSpace, MixedSpace, PhysicalBasis};
use crate::fem::Tabulation;
use crate::mesh::{BoundaryLabel, CellGeometry, FacetKind, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Test,
    Trial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Argument {
    pub role: Role,
    pub space: MixedSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Cell,
    InteriorFacet,
    /// Exterior facets, optionally restricted to one label.
    ExteriorFacet(Option<BoundaryLabel>),
    /// Every facet of the cell.
    AllFacets,
}

impl Domain {
    fn is_facet(&self) -> bool {
        !matches!(self, Domain::Cell)
    }

    fn contains(&self, mesh: &Mesh, facet: usize) -> bool {
        match self {
            Domain::Cell => false,
            Domain::AllFacets => true,
            Domain::InteriorFacet => mesh.facet_kind(facet) == FacetKind::Interior,
            Domain::ExteriorFacet(label) => {
                mesh.facet_kind(facet) == FacetKind::Exterior && label.is_none_or(|l| mesh.exterior_label(facet) == Some(l))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegralTerm {
    pub domain: Domain,
    pub integrand: Expr,
}

impl IntegralTerm {
    pub fn cell(integrand: Expr) -> Self {
        IntegralTerm { domain: Domain::Cell, integrand }
    }

    pub fn interior_facet(integrand: Expr) -> Self {
        IntegralTerm { domain: Domain::InteriorFacet, integrand }
    }

    pub fn exterior_facet(label: Option<BoundaryLabel>, integrand: Expr) -> Self {
        IntegralTerm { domain: Domain::ExteriorFacet(label), integrand }
    }

    pub fn all_facets(integrand: Expr) -> Self {
        IntegralTerm { domain: Domain::AllFacets, integrand }
    }
}

#[derive(Debug)]
struct Prepared {
    cell_rule: QuadratureRule,
    edge_rule: QuadratureRule,
    /// Per family: tabulation at cell points then at each local edge's points.
    tabs: HashMap<ElementFamily, [Tabulation; 4]>,
}

#[derive(Debug)]
struct FormData {
    arguments: Vec<Argument>,
    coefficients: Vec<Function>,
    terms: Vec<IntegralTerm>,
    degree: usize,
    quad_degree: usize,
    prepared: OnceLock<Prepared>,
}

/// A multilinear form: ordered arguments (test first), coefficient functions
/// and integral terms. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct FormIR(Arc<FormData>);

#[derive(Debug, Clone, Copy)]
struct Info {
    vs: usize,
    args: [bool; 2],
    degree: usize,
}

impl FormIR {
    /// Validates and builds a form. Quadrature exactness is the estimated
    /// degree plus two, capped at the largest available rule.
    pub fn new(arguments: Vec<Argument>, coefficients: Vec<Function>, terms: Vec<IntegralTerm>) -> Result<Self> {
        Self::build(arguments, coefficients, terms, None)
    }

    /// As [`FormIR::new`] with an explicit quadrature exactness, rejected if
    /// below the estimated integrand degree.
    pub fn with_quadrature(
        arguments: Vec<Argument>,
        coefficients: Vec<Function>,
        terms: Vec<IntegralTerm>,
        exactness: usize,
    ) -> Result<Self> {
        Self::build(arguments, coefficients, terms, Some(exactness))
    }

    pub fn bilinear(test: impl Into<MixedSpace>, trial: impl Into<MixedSpace>, terms: Vec<IntegralTerm>) -> Result<Self> {
        Self::new(
            vec![Argument { role: Role::Test, space: test.into() }, Argument { role: Role::Trial, space: trial.into() }],
            vec![],
            terms,
        )
    }

    pub fn linear(test: impl Into<MixedSpace>, terms: Vec<IntegralTerm>) -> Result<Self> {
        Self::new(vec![Argument { role: Role::Test, space: test.into() }], vec![], terms)
    }

    fn build(arguments: Vec<Argument>, coefficients: Vec<Function>, terms: Vec<IntegralTerm>, exactness: Option<usize>) -> Result<Self> {
        if arguments.len() > 2 {
            return Err(Error::RankTooHigh(arguments.len()));
        }
        if let Some(a) = arguments.first() {
            if a.role != Role::Test {
                return Err(Error::InvalidForm("first argument must be the test function".into()));
            }
        }
        if let Some(a) = arguments.get(1) {
            if a.role != Role::Trial {
                return Err(Error::InvalidForm("second argument must be the trial function".into()));
            }
        }
        if terms.is_empty() {
            return Err(Error::InvalidForm("form has no terms".into()));
        }
        let mesh = arguments.first().map(|a| a.space.mesh().clone()).or_else(|| coefficients.first().map(|c| c.space().mesh().clone()));
        if let Some(mesh) = &mesh {
            let all_on_mesh = arguments.iter().flat_map(|a| a.space.fields()).all(|s| Arc::ptr_eq(s.mesh(), mesh))
                && coefficients.iter().all(|c| Arc::ptr_eq(c.space().mesh(), mesh));
            if !all_on_mesh {
                return Err(Error::InvalidForm("arguments and coefficients must share one mesh".into()));
            }
        } else {
            return Err(Error::InvalidForm("a functional needs at least one coefficient to fix its mesh".into()));
        }
        let mut form = FormData { arguments, coefficients, terms, degree: 0, quad_degree: 0, prepared: OnceLock::new() };
        let rank = form.arguments.len();
        let mut degree = 0;
        for t in &form.terms {
            let info = analyze(&form, &t.integrand, t.domain)?;
            if info.vs != 1 {
                return Err(Error::InvalidForm("integrand must be scalar-valued".into()));
            }
            let want = [rank >= 1, rank >= 2];
            if info.args != want {
                return Err(Error::InvalidForm(format!(
                    "each term must be linear in every argument (found test: {}, trial: {})",
                    info.args[0], info.args[1]
                )));
            }
            degree = degree.max(info.degree);
        }
        form.degree = degree;
        form.quad_degree = match exactness {
            Some(q) if q < degree => return Err(Error::InsufficientQuadrature { given: q, required: degree }),
            Some(q) if q > MAX_EXACTNESS => return Err(Error::UnsupportedQuadrature(q)),
            Some(q) => q,
            None if degree > MAX_EXACTNESS => return Err(Error::InsufficientQuadrature { given: MAX_EXACTNESS, required: degree }),
            None => (degree + 2).min(MAX_EXACTNESS),
        };
        Ok(FormIR(Arc::new(form)))
    }

    pub fn rank(&self) -> usize {
        self.0.arguments.len()
    }

    pub fn arguments(&self) -> &[Argument] {
        &self.0.arguments
    }

    pub fn coefficients(&self) -> &[Function] {
        &self.0.coefficients
    }

    pub fn terms(&self) -> &[IntegralTerm] {
        &self.0.terms
    }

    pub fn quadrature_degree(&self) -> usize {
        self.0.quad_degree
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        match self.0.arguments.first() {
            Some(a) => a.space.mesh(),
            None => self.0.coefficients[0].space().mesh(),
        }
    }

    /// Local tensor shape on any cell.
    pub fn local_shape(&self) -> Vec<usize> {
        self.0.arguments.iter().map(|a| a.space.local_dim()).collect()
    }

    /// Stable identity used for hash-consing in compiled plans.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as *const u8 as usize
    }

    pub fn ptr_eq(&self, other: &FormIR) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// The same integrands with `old` replaced by `new` wherever it appears
    /// as an argument field. Both spaces must share a reference element.
    pub fn replace_space(&self, old: &FunctionSpace, new: &FunctionSpace) -> Result<FormIR> {
        if old.family() != new.family() || !Arc::ptr_eq(old.mesh(), new.mesh()) {
            return Err(Error::InvalidForm("replacement space must have the same element and mesh".into()));
        }
        let arguments = self
            .0
            .arguments
            .iter()
            .map(|a| Argument {
                role: a.role,
                space: MixedSpace::new(a.space.fields().iter().map(|s| if s == old { new.clone() } else { s.clone() }).collect()),
            })
            .collect();
        Self::build(arguments, self.0.coefficients.clone(), self.0.terms.clone(), Some(self.0.quad_degree))
    }

    /// Places a form over single-field (or smaller mixed) arguments into the
    /// fields `test_fields` / `trial_fields` of larger mixed spaces.
    pub fn embed(&self, test: &MixedSpace, test_fields: &[usize], trial: Option<(&MixedSpace, &[usize])>) -> Result<FormIR> {
        let mut arguments = vec![Argument { role: Role::Test, space: test.clone() }];
        let check = |own: &MixedSpace, target: &MixedSpace, fields: &[usize]| -> Result<()> {
            if own.n_fields() != fields.len() || fields.iter().zip(own.fields()).any(|(&f, s)| target.fields().get(f) != Some(s)) {
                return Err(Error::InvalidForm("embedding does not match the argument spaces".into()));
            }
            Ok(())
        };
        if self.rank() == 0 {
            return Err(Error::InvalidForm("cannot embed a functional".into()));
        }
        check(&self.0.arguments[0].space, test, test_fields)?;
        if let Some((trial_space, trial_fields)) = trial {
            if self.rank() != 2 {
                return Err(Error::InvalidForm("trial embedding given for a linear form".into()));
            }
            check(&self.0.arguments[1].space, trial_space, trial_fields)?;
            arguments.push(Argument { role: Role::Trial, space: trial_space.clone() });
        } else if self.rank() == 2 {
            return Err(Error::InvalidForm("bilinear form needs a trial embedding".into()));
        }
        let tf = test_fields.to_vec();
        let uf = trial.map(|t| t.1.to_vec()).unwrap_or_default();
        let terms = self
            .0
            .terms
            .iter()
            .map(|t| IntegralTerm { domain: t.domain, integrand: t.integrand.remap(&|i| tf[i], &|i| uf[i], &|i| i) })
            .collect();
        Self::build(arguments, self.0.coefficients.clone(), terms, Some(self.0.quad_degree))
    }

    /// Sum of forms with identical arguments, integrated with the most
    /// accurate of their rules.
    pub fn sum(forms: &[FormIR]) -> Result<FormIR> {
        let first = forms.first().ok_or_else(|| Error::InvalidForm("empty sum".into()))?;
        let mut coefficients: Vec<Function> = Vec::new();
        let mut terms = Vec::new();
        for f in forms {
            if f.arguments() != first.arguments() {
                return Err(Error::InvalidForm("summed forms must share their arguments".into()));
            }
            let off = coefficients.len();
            coefficients.extend(f.coefficients().iter().cloned());
            terms.extend(
                f.terms().iter().map(|t| IntegralTerm { domain: t.domain, integrand: t.integrand.remap(&|i| i, &|i| i, &|i| i + off) }),
            );
        }
        let q = forms.iter().map(|f| f.0.quad_degree).max();
        Self::build(first.arguments().to_vec(), coefficients, terms, q)
    }

    /// Every term multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<FormIR> {
        let terms = self.0.terms.iter().map(|t| IntegralTerm { domain: t.domain, integrand: s * t.integrand.clone() }).collect();
        Self::build(self.0.arguments.clone(), self.0.coefficients.clone(), terms, Some(self.0.quad_degree))
    }

    fn prepared(&self) -> &Prepared {
        self.0.prepared.get_or_init(|| {
            let q = self.0.quad_degree;
            let cell_rule = quadrature(QuadratureKind::Cell, q).expect("validated exactness");
            let edge_rule = quadrature(QuadratureKind::Edge, q).expect("validated exactness");
            let mut tabs = HashMap::new();
            let spaces = self.0.arguments.iter().flat_map(|a| a.space.fields().iter()).chain(self.0.coefficients.iter().map(|c| c.space()));
            for s in spaces {
                if let Some(el) = s.element() {
                    tabs.entry(s.family()).or_insert_with(|| {
                        [
                            el.tabulate(&cell_rule.points),
                            el.tabulate(&edge_points(&edge_rule.points, 0)),
                            el.tabulate(&edge_points(&edge_rule.points, 1)),
                            el.tabulate(&edge_points(&edge_rule.points, 2)),
                        ]
                    });
                }
            }
            Prepared { cell_rule, edge_rule, tabs }
        })
    }
}

fn leaf_space(form: &FormData, role: Role, field: usize) -> Result<&FunctionSpace> {
    let axis = if role == Role::Test { 0 } else { 1 };
    form.arguments
        .get(axis)
        .and_then(|a| a.space.fields().get(field))
        .ok_or_else(|| Error::InvalidForm(format!("{role:?} field {field} is not declared")))
}

fn analyze(form: &FormData, e: &Expr, domain: Domain) -> Result<Info> {
    let none = [false, false];
    let space_info = |s: &FunctionSpace, args: [bool; 2]| -> Result<Info> {
        if s.family().is_trace() && !domain.is_facet() {
            return Err(Error::InvalidForm("trace functions only live on facets".into()));
        }
        Ok(Info { vs: s.value_size(), args, degree: s.family().degree() })
    };
    let leaf = |e: &Expr| -> Result<(Info, &FunctionSpace)> {
        match e {
            Expr::Test(f) => {
                let s = leaf_space(form, Role::Test, *f)?;
                Ok((space_info(s, [true, false])?, s))
            }
            Expr::Trial(f) => {
                let s = leaf_space(form, Role::Trial, *f)?;
                Ok((space_info(s, [false, true])?, s))
            }
            Expr::Coefficient(i) => {
                let s = form
                    .coefficients
                    .get(*i)
                    .map(|c| c.space())
                    .ok_or_else(|| Error::InvalidForm(format!("coefficient {i} is not declared")))?;
                Ok((space_info(s, none)?, s))
            }
            _ => Err(Error::InvalidForm("grad/div apply only to arguments and coefficients".into())),
        }
    };
    let combine = |a: Info, b: Info| -> Result<[bool; 2]> {
        if (a.args[0] && b.args[0]) || (a.args[1] && b.args[1]) {
            return Err(Error::InvalidForm("product is not multilinear in the arguments".into()));
        }
        Ok([a.args[0] || b.args[0], a.args[1] || b.args[1]])
    };
    match e {
        Expr::Test(_) | Expr::Trial(_) | Expr::Coefficient(_) => Ok(leaf(e)?.0),
        Expr::Grad(inner) => {
            let (info, s) = leaf(inner)?;
            if info.vs != 1 || s.family().is_trace() {
                return Err(Error::InvalidForm("grad needs a scalar cell space".into()));
            }
            Ok(Info { vs: 2, args: info.args, degree: info.degree.saturating_sub(1) })
        }
        Expr::Div(inner) => {
            let (info, _) = leaf(inner)?;
            if info.vs != 2 {
                return Err(Error::InvalidForm("div needs a vector-valued operand".into()));
            }
            Ok(Info { vs: 1, args: info.args, degree: info.degree.saturating_sub(1) })
        }
        Expr::Normal => {
            if !domain.is_facet() {
                return Err(Error::InvalidForm("normal used in a cell integral".into()));
            }
            Ok(Info { vs: 2, args: none, degree: 0 })
        }
        Expr::Jump(inner) => {
            if !domain.is_facet() {
                return Err(Error::InvalidForm("jump used in a cell integral".into()));
            }
            let i = analyze(form, inner, domain)?;
            Ok(Info { vs: 3 - i.vs, ..i })
        }
        Expr::Field(f) => Ok(Info { vs: f.value_size(), args: none, degree: f.degree() }),
        Expr::Constant(_) => Ok(Info { vs: 1, args: none, degree: 0 }),
        Expr::Dot(a, b) => {
            let (a, b) = (analyze(form, a, domain)?, analyze(form, b, domain)?);
            if a.vs != b.vs {
                return Err(Error::InvalidForm("dot of mismatched value sizes".into()));
            }
            Ok(Info { vs: 1, args: combine(a, b)?, degree: a.degree + b.degree })
        }
        Expr::Mul(a, b) => {
            let (a, b) = (analyze(form, a, domain)?, analyze(form, b, domain)?);
            if a.vs == 2 && b.vs == 2 {
                return Err(Error::InvalidForm("product of two vectors; use dot".into()));
            }
            Ok(Info { vs: a.vs.max(b.vs), args: combine(a, b)?, degree: a.degree + b.degree })
        }
        Expr::Add(a, b) => {
            let (a, b) = (analyze(form, a, domain)?, analyze(form, b, domain)?);
            if a.vs != b.vs || a.args != b.args {
                return Err(Error::InvalidForm("sum of terms with different shapes or arguments".into()));
            }
            Ok(Info { vs: a.vs, args: a.args, degree: a.degree.max(b.degree) })
        }
        Expr::Neg(a) => analyze(form, a, domain),
    }
}

/// Conservative polynomial degree of the integrands (quadrature uses this plus two).
pub fn estimate_degree(form: &FormIR) -> usize {
    form.0.degree
}

/// Values at every point, broadcast over the argument axes present.
/// Layout: `data[((p * l0 + i) * l1 + j) * vs + c]` with `l = 1` for absent axes.
#[derive(Debug, Clone)]
struct Val {
    np: usize,
    vs: usize,
    ax: [Option<(usize, usize)>; 2],
    data: Vec<f64>,
}

impl Val {
    fn len(&self, a: usize) -> usize {
        self.ax[a].map_or(1, |r| r.1)
    }

    #[inline]
    fn at(&self, p: usize, i: usize, j: usize, c: usize) -> f64 {
        let (l0, l1) = (self.len(0), self.len(1));
        let i = if self.ax[0].is_some() { i } else { 0 };
        let j = if self.ax[1].is_some() { j } else { 0 };
        self.data[((p * l0 + i) * l1 + j) * self.vs + c]
    }

    fn constant(np: usize, v: &[f64]) -> Val {
        let mut data = Vec::with_capacity(np * v.len());
        for _ in 0..np {
            data.extend_from_slice(v);
        }
        Val { np, vs: v.len(), ax: [None, None], data }
    }

    fn product(a: &Val, b: &Val, dot: bool) -> Val {
        let ax = [a.ax[0].or(b.ax[0]), a.ax[1].or(b.ax[1])];
        let vs = if dot { 1 } else { a.vs.max(b.vs) };
        let (l0, l1) = (ax[0].map_or(1, |r| r.1), ax[1].map_or(1, |r| r.1));
        let mut data = vec![0.0; a.np * l0 * l1 * vs];
        for p in 0..a.np {
            for i in 0..l0 {
                for j in 0..l1 {
                    let o = ((p * l0 + i) * l1 + j) * vs;
                    if dot {
                        data[o] = (0..a.vs).map(|c| a.at(p, i, j, c) * b.at(p, i, j, c)).sum();
                    } else {
                        for c in 0..vs {
                            let ca = if a.vs == 1 { 0 } else { c };
                            let cb = if b.vs == 1 { 0 } else { c };
                            data[o + c] = a.at(p, i, j, ca) * b.at(p, i, j, cb);
                        }
                    }
                }
            }
        }
        Val { np: a.np, vs, ax, data }
    }

    fn sum(a: &Val, b: &Val) -> Val {
        let merge = |x: Option<(usize, usize)>, y: Option<(usize, usize)>| match (x, y) {
            (Some(x), Some(y)) => {
                let lo = x.0.min(y.0);
                Some((lo, (x.0 + x.1).max(y.0 + y.1) - lo))
            }
            _ => None,
        };
        let ax = [merge(a.ax[0], b.ax[0]), merge(a.ax[1], b.ax[1])];
        let (l0, l1) = (ax[0].map_or(1, |r| r.1), ax[1].map_or(1, |r| r.1));
        let vs = a.vs;
        let mut data = vec![0.0; a.np * l0 * l1 * vs];
        for v in [a, b] {
            let (s0, s1) = (ax[0].map_or(0, |r| v.ax[0].unwrap().0 - r.0), ax[1].map_or(0, |r| v.ax[1].unwrap().0 - r.0));
            for p in 0..a.np {
                for i in 0..v.len(0) {
                    for j in 0..v.len(1) {
                        for c in 0..vs {
                            data[((p * l0 + i + s0) * l1 + j + s1) * vs + c] += v.at(p, i, j, c);
                        }
                    }
                }
            }
        }
        Val { np: a.np, vs, ax, data }
    }
}

/// Per-(cell, point set) evaluation context.
struct Ctx<'a> {
    form: &'a FormIR,
    cell: usize,
    geom: &'a CellGeometry,
    /// `None` for the cell interior, `Some(e)` on local edge `e`.
    edge: Option<usize>,
    /// Edge parameters of the points (facet point sets only).
    s: &'a [f64],
    phys: &'a [[f64; 2]],
    slot: usize,
    basis: HashMap<(usize, usize), PhysicalBasis>,
    /// Local offsets of each argument's fields.
    offsets: [Vec<usize>; 2],
}

impl Ctx<'_> {
    fn np(&self) -> usize {
        self.phys.len()
    }

    fn phys_basis(&mut self, s: &FunctionSpace) -> &PhysicalBasis {
        let key = (s.id(), self.slot);
        if !self.basis.contains_key(&key) {
            let tab = &self.form.prepared().tabs[&s.family()][self.slot];
            let pb = physical_basis(s, self.cell, self.geom, tab);
            self.basis.insert(key, pb);
        }
        &self.basis[&key]
    }

    /// Argument basis leaf; `what`: 0 value, 1 grad, 2 div.
    fn arg_leaf(&mut self, role: Role, field: usize, what: u8) -> Val {
        let axis = if role == Role::Test { 0 } else { 1 };
        let space = self.form.0.arguments[axis].space.field(field).clone();
        let off = self.offsets[axis][field];
        let np = self.np();
        if let ElementFamily::Trace(k) = space.family() {
            let e = self.edge.expect("trace leaf validated to facets");
            let mesh = self.form.mesh().clone();
            let n = k + 1;
            let mut data = vec![0.0; np * n];
            for p in 0..np {
                let full = trace_basis_on_edge(&mesh, k, self.cell, e, self.s[p]);
                data[p * n..(p + 1) * n].copy_from_slice(&full[e * n..(e + 1) * n]);
            }
            let mut ax = [None, None];
            ax[axis] = Some((off + e * n, n));
            return Val { np, vs: 1, ax, data };
        }
        let pb = self.phys_basis(&space).clone();
        let n = pb.n;
        let vs = match what {
            0 => pb.vs,
            1 => 2,
            _ => 1,
        };
        let mut data = vec![0.0; np * n * vs];
        for p in 0..np {
            for i in 0..n {
                let o = (p * n + i) * vs;
                match what {
                    0 => {
                        for c in 0..vs {
                            data[o + c] = pb.value(p, i, c);
                        }
                    }
                    1 => {
                        data[o] = pb.grad(p, i, 0, 0);
                        data[o + 1] = pb.grad(p, i, 0, 1);
                    }
                    _ => data[o] = pb.div[p * n + i],
                }
            }
        }
        let mut ax = [None, None];
        ax[axis] = Some((off, n));
        Val { np, vs, ax, data }
    }

    fn coef_leaf(&mut self, idx: usize, what: u8) -> Val {
        let f = self.form.0.coefficients[idx].clone();
        let space = f.space().clone();
        let coeffs = f.cell_coeffs(self.cell);
        let np = self.np();
        if let ElementFamily::Trace(k) = space.family() {
            let e = self.edge.expect("trace leaf validated to facets");
            let mesh = self.form.mesh().clone();
            let data = (0..np)
                .map(|p| trace_basis_on_edge(&mesh, k, self.cell, e, self.s[p]).iter().zip(&coeffs).map(|(b, c)| b * c).sum())
                .collect();
            return Val { np, vs: 1, ax: [None, None], data };
        }
        let pb = self.phys_basis(&space).clone();
        let vs = match what {
            0 => pb.vs,
            1 => 2,
            _ => 1,
        };
        let mut data = vec![0.0; np * vs];
        for p in 0..np {
            for (i, a) in coeffs.iter().enumerate() {
                match what {
                    0 => {
                        for c in 0..vs {
                            data[p * vs + c] += a * pb.value(p, i, c);
                        }
                    }
                    1 => {
                        data[p * 2] += a * pb.grad(p, i, 0, 0);
                        data[p * 2 + 1] += a * pb.grad(p, i, 0, 1);
                    }
                    _ => data[p] += a * pb.div[p * pb.n + i],
                }
            }
        }
        Val { np, vs, ax: [None, None], data }
    }

    fn eval(&mut self, e: &Expr) -> Val {
        let np = self.np();
        match e {
            Expr::Test(f) => self.arg_leaf(Role::Test, *f, 0),
            Expr::Trial(f) => self.arg_leaf(Role::Trial, *f, 0),
            Expr::Coefficient(i) => self.coef_leaf(*i, 0),
            Expr::Grad(inner) | Expr::Div(inner) => {
                let what = if matches!(e, Expr::Grad(_)) { 1 } else { 2 };
                match **inner {
                    Expr::Test(f) => self.arg_leaf(Role::Test, f, what),
                    Expr::Trial(f) => self.arg_leaf(Role::Trial, f, what),
                    Expr::Coefficient(i) => self.coef_leaf(i, what),
                    _ => unreachable!("validated"),
                }
            }
            Expr::Normal => {
                let n = self.geom.facet_normals[self.edge.expect("validated")];
                Val::constant(np, &n)
            }
            Expr::Jump(inner) => {
                let v = self.eval(inner);
                let n = Val::constant(np, &self.geom.facet_normals[self.edge.expect("validated")]);
                Val::product(&v, &n, v.vs == 2)
            }
            Expr::Field(f) => {
                let vs = f.value_size();
                let mut data = Vec::with_capacity(np * vs);
                for x in self.phys {
                    data.extend_from_slice(&f.eval(*x)[..vs]);
                }
                Val { np, vs, ax: [None, None], data }
            }
            Expr::Constant(v) => Val::constant(np, &[*v]),
            Expr::Dot(a, b) => {
                let (a, b) = (self.eval(a), self.eval(b));
                Val::product(&a, &b, true)
            }
            Expr::Mul(a, b) => {
                let (a, b) = (self.eval(a), self.eval(b));
                Val::product(&a, &b, false)
            }
            Expr::Add(a, b) => {
                let (a, b) = (self.eval(a), self.eval(b));
                Val::sum(&a, &b)
            }
            Expr::Neg(a) => {
                let mut v = self.eval(a);
                v.data.iter_mut().for_each(|x| *x = -*x);
                v
            }
        }
    }
}

/// Cell-local element tensor of `form`, including this cell's side of facet terms.
pub fn assemble_local(form: &FormIR, cell: usize) -> Result<DenseTensor> {
    let mesh = form.mesh().clone();
    if cell >= mesh.n_cells() {
        return Err(Error::OutOfRange { index: cell, len: mesh.n_cells() });
    }
    let shape = form.local_shape();
    let blocks: Vec<Vec<usize>> = form.arguments().iter().map(|a| a.space.local_offsets()).collect();
    let mut out = DenseTensor::zeros(&shape).with_blocks(blocks.clone());
    let geom = mesh.geometry(cell);
    let prep = form.prepared();
    let l1 = if shape.len() == 2 { shape[1] } else { 1 };
    let offsets = [blocks.first().cloned().unwrap_or_default(), blocks.get(1).cloned().unwrap_or_default()];

    let cell_phys: Vec<[f64; 2]> = prep.cell_rule.points.iter().map(|p| geom.map(*p)).collect();
    let edge_s: Vec<f64> = prep.edge_rule.points.iter().map(|p| p[0]).collect();
    let cell_facets = mesh.cell_facets(cell);

    let mut contexts: HashMap<usize, (Vec<[f64; 2]>, Vec<f64>)> = HashMap::new();
    for t in form.terms() {
        let slots: Vec<usize> = match t.domain {
            Domain::Cell => vec![0],
            d => (0..3).filter(|&e| d.contains(&mesh, cell_facets[e])).map(|e| e + 1).collect(),
        };
        for slot in slots {
            let (phys, weights) = contexts.entry(slot).or_insert_with(|| {
                if slot == 0 {
                    (cell_phys.clone(), prep.cell_rule.weights.iter().map(|w| w * geom.det_j).collect())
                } else {
                    let pts = edge_points(&prep.edge_rule.points, slot - 1);
                    let len = geom.facet_lengths[slot - 1];
                    (pts.iter().map(|p| geom.map(*p)).collect(), prep.edge_rule.weights.iter().map(|w| w * len).collect())
                }
            });
            let mut ctx = Ctx {
                form,
                cell,
                geom: &geom,
                edge: if slot == 0 { None } else { Some(slot - 1) },
                s: &edge_s,
                phys,
                slot,
                basis: HashMap::new(),
                offsets: offsets.clone(),
            };
            let v = ctx.eval(&t.integrand);
            let (r0, r1) = (v.ax[0].unwrap_or((0, 1)), v.ax[1].unwrap_or((0, 1)));
            let data = out.data_mut();
            for (p, w) in weights.iter().enumerate() {
                for i in 0..r0.1 {
                    for j in 0..r1.1 {
                        data[(r0.0 + i) * l1 + r1.0 + j] += w * v.data[(p * r0.1 + i) * r1.1 + j];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Value of a functional (rank-0 form) summed over all cells.
pub fn assemble_scalar(form: &FormIR) -> Result<f64> {
    if form.rank() != 0 {
        return Err(Error::InvalidForm("assemble_scalar needs a rank-0 form".into()));
    }
    (0..form.mesh().n_cells()).map(|c| assemble_local(form, c).map(|t| t.data()[0])).sum()
}
