use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::element::{legendre, ref_edge_length, ref_edge_point, ElementFamily, ReferenceElement, Tabulation};
use super::quadrature::{quadrature, QuadratureKind, MAX_EXACTNESS};
use crate::error::{Error, Result};
use crate::mesh::{CellGeometry, Mesh};

static NEXT_SPACE_ID: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug)]
struct SpaceData {
    id: usize,
    mesh: Arc<Mesh>,
    family: ElementFamily,
    element: Option<Arc<ReferenceElement>>,
    broken: bool,
    ndof: usize,
    ldim: usize,
    cell_dofs: Vec<usize>,
    /// RT only: per (cell, local dof) factor applied after the Piola map.
    dof_scale: Vec<f64>,
    /// Trace only: per (facet, j) global index.
    facet_dofs: Vec<usize>,
}

/// A finite element space on a mesh. Cloning is cheap; clones compare equal.
#[derive(Debug, Clone)]
pub struct FunctionSpace(Arc<SpaceData>);

impl PartialEq for FunctionSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for FunctionSpace {}

impl FunctionSpace {
    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.0.mesh
    }

    pub fn family(&self) -> ElementFamily {
        self.0.family
    }

    pub fn is_broken(&self) -> bool {
        self.0.broken
    }

    pub fn ndof(&self) -> usize {
        self.0.ndof
    }

    pub fn local_dim(&self) -> usize {
        self.0.ldim
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let l = self.0.ldim;
        &self.0.cell_dofs[cell * l..(cell + 1) * l]
    }

    pub fn facet_dofs(&self, facet: usize) -> &[usize] {
        let k = self.0.family.degree() + 1;
        &self.0.facet_dofs[facet * k..(facet + 1) * k]
    }

    pub(crate) fn element(&self) -> Option<&Arc<ReferenceElement>> {
        self.0.element.as_ref()
    }

    pub(crate) fn dof_scale(&self, cell: usize) -> Option<&[f64]> {
        if self.0.dof_scale.is_empty() {
            None
        } else {
            let l = self.0.ldim;
            Some(&self.0.dof_scale[cell * l..(cell + 1) * l])
        }
    }

    /// No global dof is shared between cells.
    pub fn is_cellwise_discontinuous(&self) -> bool {
        self.family().is_discontinuous() || self.is_broken()
    }

    pub fn value_size(&self) -> usize {
        self.family().value_size()
    }
}

/// Builds a space with its global dof numbering.
pub fn create_space(mesh: &Arc<Mesh>, family: ElementFamily) -> Result<FunctionSpace> {
    if !family.is_supported() || matches!(family, ElementFamily::RT(3)) {
        return Err(Error::UnsupportedElement(format!("{family:?}")));
    }
    build_space(mesh, family, false)
}

fn build_space(mesh: &Arc<Mesh>, family: ElementFamily, broken: bool) -> Result<FunctionSpace> {
    let nc = mesh.n_cells();
    let nf = mesh.n_facets();
    let nv = mesh.n_vertices();
    let ldim = family.local_dim();
    let element = if family.is_trace() { None } else { Some(ReferenceElement::get(family)?) };
    let mut cell_dofs = Vec::with_capacity(nc * ldim);
    let mut dof_scale = Vec::new();
    let mut facet_dofs = Vec::new();
    let ndof;
    match family {
        ElementFamily::DG(_) | ElementFamily::VectorDG(_) => {
            cell_dofs.extend(0..nc * ldim);
            ndof = nc * ldim;
        }
        ElementFamily::CG(k) => {
            let ni = if k >= 3 { (k - 1) * (k - 2) / 2 } else { 0 };
            for c in 0..nc {
                cell_dofs.extend(mesh.cell_vertices(c));
                let cf = mesh.cell_facets(c);
                for e in 0..3 {
                    let rev = mesh.edge_reversed(c, e);
                    for m in 0..k - 1 {
                        let mm = if rev { k - 2 - m } else { m };
                        cell_dofs.push(nv + cf[e] * (k - 1) + mm);
                    }
                }
                for m in 0..ni {
                    cell_dofs.push(nv + nf * (k - 1) + c * ni + m);
                }
            }
            ndof = nv + nf * (k - 1) + nc * ni;
        }
        ElementFamily::RT(k) => {
            let ni = k * (k - 1);
            for c in 0..nc {
                let g = mesh.geometry(c);
                let cf = mesh.cell_facets(c);
                for e in 0..3 {
                    let rev = mesh.edge_reversed(c, e);
                    let len_ratio = g.facet_lengths[e] / ref_edge_length(e);
                    for j in 0..k {
                        let sign = if rev && j % 2 == 0 { -1.0 } else { 1.0 };
                        dof_scale.push(sign * len_ratio);
                        if broken {
                            cell_dofs.push(c * ldim + e * k + j);
                        } else {
                            cell_dofs.push(cf[e] * k + j);
                        }
                    }
                }
                for m in 0..ni {
                    dof_scale.push(1.0);
                    if broken {
                        cell_dofs.push(c * ldim + 3 * k + m);
                    } else {
                        cell_dofs.push(nf * k + c * ni + m);
                    }
                }
            }
            ndof = if broken { nc * ldim } else { nf * k + nc * ni };
        }
        ElementFamily::Trace(k) => {
            facet_dofs.extend(0..nf * (k + 1));
            for c in 0..nc {
                for f in mesh.cell_facets(c) {
                    cell_dofs.extend(f * (k + 1)..(f + 1) * (k + 1));
                }
            }
            ndof = nf * (k + 1);
        }
    }
    Ok(FunctionSpace(Arc::new(SpaceData {
        id: NEXT_SPACE_ID.fetch_add(1, Ordering::Relaxed),
        mesh: mesh.clone(),
        family,
        element,
        broken,
        ndof,
        ldim,
        cell_dofs,
        dof_scale,
        facet_dofs,
    })))
}

/// Cell-wise independent copy of a conforming RT space with the same local basis.
pub fn break_space(space: &FunctionSpace) -> Result<FunctionSpace> {
    if space.is_broken() {
        return Err(Error::UnsupportedElement("space is already broken".into()));
    }
    if !matches!(space.family(), ElementFamily::RT(_)) {
        return Err(Error::UnsupportedElement(format!("cannot break {:?}", space.family())));
    }
    build_space(space.mesh(), space.family(), true)
}

/// Broken RT space of any supported degree, including the RT(3) target used
/// by flux post-processing.
pub fn broken_rt(mesh: &Arc<Mesh>, k: usize) -> Result<FunctionSpace> {
    let family = ElementFamily::RT(k);
    if !family.is_supported() {
        return Err(Error::UnsupportedElement(format!("{family:?}")));
    }
    build_space(mesh, family, true)
}

/// Ordered product of spaces; global dofs of field `i` start at `offsets[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSpace {
    fields: Vec<FunctionSpace>,
    offsets: Vec<usize>,
}

impl MixedSpace {
    pub fn new(fields: Vec<FunctionSpace>) -> Self {
        assert!(!fields.is_empty(), "mixed space needs at least one field");
        let mut offsets = vec![0];
        for f in &fields {
            offsets.push(offsets.last().unwrap() + f.ndof());
        }
        MixedSpace { fields, offsets }
    }

    pub fn single(space: FunctionSpace) -> Self {
        Self::new(vec![space])
    }

    pub fn fields(&self) -> &[FunctionSpace] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &FunctionSpace {
        &self.fields[i]
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn ndof(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn field_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn local_dim(&self) -> usize {
        self.fields.iter().map(|f| f.local_dim()).sum()
    }

    /// Local offsets of each field within a cell tensor axis.
    pub fn local_offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for f in &self.fields {
            o.push(o.last().unwrap() + f.local_dim());
        }
        o
    }

    pub fn cell_dofs(&self, cell: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.local_dim());
        for (f, off) in self.fields.iter().zip(&self.offsets) {
            out.extend(f.cell_dofs(cell).iter().map(|d| d + off));
        }
        out
    }

    pub fn subspace(&self, fields: &[usize]) -> MixedSpace {
        MixedSpace::new(fields.iter().map(|&i| self.fields[i].clone()).collect())
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.fields[0].mesh()
    }

    /// Splits a global vector into per-field slices.
    pub fn split<'a>(&self, v: &'a [f64]) -> Vec<&'a [f64]> {
        (0..self.n_fields()).map(|i| &v[self.field_range(i)]).collect()
    }
}

impl From<FunctionSpace> for MixedSpace {
    fn from(s: FunctionSpace) -> Self {
        MixedSpace::single(s)
    }
}

/// Coefficient vector on a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    space: FunctionSpace,
    coeffs: Vec<f64>,
}

impl Function {
    pub fn zeros(space: &FunctionSpace) -> Self {
        Function { space: space.clone(), coeffs: vec![0.0; space.ndof()] }
    }

    pub fn from_coeffs(space: &FunctionSpace, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndof() {
            return Err(Error::DimensionMismatch { expected: space.ndof(), got: coeffs.len() });
        }
        Ok(Function { space: space.clone(), coeffs })
    }

    pub fn space(&self) -> &FunctionSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn cell_coeffs(&self, cell: usize) -> Vec<f64> {
        self.space.cell_dofs(cell).iter().map(|&d| self.coeffs[d]).collect()
    }
}

/// Physical basis data on one cell at a set of points.
///
/// `values[(p * n + i) * vs + c]`, `grads[((p * n + i) * vs + c) * 2 + d]`, `div[p * n + i]`.
#[derive(Debug, Clone)]
pub struct PhysicalBasis {
    pub npts: usize,
    pub n: usize,
    pub vs: usize,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub div: Vec<f64>,
}

impl PhysicalBasis {
    #[inline]
    pub fn value(&self, p: usize, i: usize, c: usize) -> f64 {
        self.values[(p * self.n + i) * self.vs + c]
    }

    #[inline]
    pub fn grad(&self, p: usize, i: usize, c: usize, d: usize) -> f64 {
        self.grads[((p * self.n + i) * self.vs + c) * 2 + d]
    }
}

/// Maps a reference tabulation of `space`'s element to physical basis values
/// on `cell`. Not valid for trace spaces.
pub fn physical_basis(space: &FunctionSpace, cell: usize, geom: &CellGeometry, tab: &Tabulation) -> PhysicalBasis {
    let n = tab.dim;
    let vs = tab.value_size;
    let np = tab.npts;
    let mut values = tab.values.clone();
    let mut grads = vec![0.0; np * n * vs * 2];
    let mut div = vec![0.0; np * n];
    let ij = geom.inv_jt;
    match space.family() {
        ElementFamily::RT(_) => {
            let j = geom.jacobian;
            let scale = space.dof_scale(cell).expect("RT space carries dof scaling");
            for p in 0..np {
                for i in 0..n {
                    let s = scale[i] / geom.det_j;
                    let (v0, v1) = (tab.value(p, i, 0), tab.value(p, i, 1));
                    let o = (p * n + i) * 2;
                    values[o] = s * (j[0][0] * v0 + j[0][1] * v1);
                    values[o + 1] = s * (j[1][0] * v0 + j[1][1] * v1);
                    div[p * n + i] = s * tab.div(p, i);
                }
            }
        }
        _ => {
            for p in 0..np {
                for i in 0..n {
                    for c in 0..vs {
                        let (d0, d1) = (tab.deriv(p, i, c, 0), tab.deriv(p, i, c, 1));
                        let o = ((p * n + i) * vs + c) * 2;
                        grads[o] = ij[0][0] * d0 + ij[0][1] * d1;
                        grads[o + 1] = ij[1][0] * d0 + ij[1][1] * d1;
                    }
                    if vs == 2 {
                        let o = (p * n + i) * 4;
                        div[p * n + i] = grads[o] + grads[o + 3];
                    }
                }
            }
        }
    }
    if vs == 1 {
        values.truncate(np * n);
    }
    PhysicalBasis { npts: np, n, vs, values, grads, div }
}

/// Values of the local trace basis of `cell` at edge parameter `s` (reference
/// direction) on local edge `e`; entries for the other two facets are zero.
pub fn trace_basis_on_edge(mesh: &Mesh, k: usize, cell: usize, e: usize, s: f64) -> Vec<f64> {
    let t = if mesh.edge_reversed(cell, e) { 1.0 - s } else { s };
    let mut out = vec![0.0; 3 * (k + 1)];
    out[e * (k + 1)..(e + 1) * (k + 1)].copy_from_slice(&legendre(k, t));
    out
}

/// Reference points of `rule` placed on local edge `e`.
pub(crate) fn edge_points(rule: &[[f64; 2]], e: usize) -> Vec<[f64; 2]> {
    rule.iter().map(|q| ref_edge_point(e, q[0])).collect()
}

/// Evaluates a (non-trace) function at reference points of a cell: returns
/// `(values[p * vs + c], div[p])`.
pub fn eval_on_cell(f: &Function, cell: usize, points: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let space = f.space();
    let mesh = space.mesh();
    let geom = mesh.geometry(cell);
    let tab = space.element().expect("not a trace space").tabulate(points);
    let pb = physical_basis(space, cell, &geom, &tab);
    let coeffs = f.cell_coeffs(cell);
    let vs = pb.vs;
    let mut vals = vec![0.0; points.len() * vs];
    let mut grads = vec![0.0; points.len() * vs * 2];
    let mut div = vec![0.0; points.len()];
    for p in 0..points.len() {
        for (i, &a) in coeffs.iter().enumerate() {
            for c in 0..vs {
                vals[p * vs + c] += a * pb.value(p, i, c);
                grads[(p * vs + c) * 2] += a * pb.grad(p, i, c, 0);
                grads[(p * vs + c) * 2 + 1] += a * pb.grad(p, i, c, 1);
            }
            div[p] += a * pb.div[p * pb.n + i];
        }
    }
    (vals, grads, div)
}

/// Physical coordinates of the nodes of a Lagrange-type space, per global dof.
pub fn dof_coordinates(space: &FunctionSpace) -> Result<Vec<[f64; 2]>> {
    let k = match space.family() {
        ElementFamily::CG(k) | ElementFamily::DG(k) => k,
        other => return Err(Error::UnsupportedElement(format!("no nodal coordinates for {other:?}"))),
    };
    let pts = super::element::lagrange_points(k);
    let mesh = space.mesh();
    let mut out = vec![[0.0; 2]; space.ndof()];
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        for (i, &d) in space.cell_dofs(c).iter().enumerate() {
            out[d] = g.map(pts[i]);
        }
    }
    Ok(out)
}

/// Nodal interpolation into a scalar Lagrange space.
pub fn interpolate_scalar(space: &FunctionSpace, f: impl Fn([f64; 2]) -> f64) -> Result<Function> {
    let coords = dof_coordinates(space)?;
    Function::from_coeffs(space, coords.into_iter().map(f).collect())
}

/// Interpolation into a vector space (VectorDG nodally, RT through its dof functionals).
pub fn interpolate_vector(space: &FunctionSpace, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Function> {
    let mesh = space.mesh().clone();
    let mut coeffs = vec![0.0; space.ndof()];
    match space.family() {
        ElementFamily::VectorDG(k) => {
            let pts = super::element::lagrange_points(k);
            let nd = pts.len();
            for c in 0..mesh.n_cells() {
                let g = mesh.geometry(c);
                let dofs = space.cell_dofs(c);
                for (i, p) in pts.iter().enumerate() {
                    let v = f(g.map(*p));
                    coeffs[dofs[i]] = v[0];
                    coeffs[dofs[nd + i]] = v[1];
                }
            }
        }
        ElementFamily::RT(k) => {
            let erule = quadrature(QuadratureKind::Edge, (2 * k + 4).min(12))?;
            let crule = quadrature(QuadratureKind::Cell, (2 * k + 4).min(12))?;
            for c in 0..mesh.n_cells() {
                let g = mesh.geometry(c);
                let dofs = space.cell_dofs(c);
                let cf = mesh.cell_facets(c);
                for e in 0..3 {
                    let f_id = cf[e];
                    let [a, b] = mesh.facet_vertices(f_id);
                    let (pa, pb) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
                    let n = mesh.facet_global_normal(f_id);
                    for j in 0..k {
                        let mut s = 0.0;
                        for (q, w) in erule.points.iter().zip(&erule.weights) {
                            let t = q[0];
                            let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                            let v = f(x);
                            s += w * (v[0] * n[0] + v[1] * n[1]) * legendre(k - 1, t)[j];
                        }
                        coeffs[dofs[e * k + j]] = s;
                    }
                }
                if k >= 2 {
                    // interior moments of the pulled-back field detJ J^{-1} f
                    let j = g.jacobian;
                    let det = g.det_j;
                    let jinv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
                    let mut row = 3 * k;
                    for &(a, b) in super::element::monomials(k - 2).iter() {
                        for comp in 0..2 {
                            let mut s = 0.0;
                            for (q, w) in crule.points.iter().zip(&crule.weights) {
                                let v = f(g.map(*q));
                                let vh = det * (jinv[comp][0] * v[0] + jinv[comp][1] * v[1]);
                                s += w * vh * q[0].powi(a) * q[1].powi(b);
                            }
                            coeffs[dofs[row]] = s;
                            row += 1;
                        }
                    }
                }
            }
        }
        other => return Err(Error::UnsupportedElement(format!("vector interpolation into {other:?}"))),
    }
    Function::from_coeffs(space, coeffs)
}

/// Facet-wise L2 projection onto a trace space, restricted to `facets`
/// (all facets when `None`). Other coefficients stay zero.
pub fn project_trace(space: &FunctionSpace, f: impl Fn([f64; 2]) -> f64, facets: Option<&[usize]>) -> Result<Function> {
    let ElementFamily::Trace(k) = space.family() else {
        return Err(Error::UnsupportedElement("trace projection needs a trace space".into()));
    };
    let mesh = space.mesh();
    let rule = quadrature(QuadratureKind::Edge, MAX_EXACTNESS)?;
    let mut coeffs = vec![0.0; space.ndof()];
    let all: Vec<usize> = (0..mesh.n_facets()).collect();
    for &fa in facets.unwrap_or(&all) {
        let [a, b] = mesh.facet_vertices(fa);
        let (pa, pb) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
        let dofs = space.facet_dofs(fa);
        for j in 0..=k {
            let mut s = 0.0;
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let t = q[0];
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                s += w * f(x) * legendre(k, t)[j];
            }
            // int_0^1 P_j^2 dt = 1 / (2j + 1)
            coeffs[dofs[j]] = s * (2 * j + 1) as f64;
        }
    }
    Function::from_coeffs(space, coeffs)
}

fn error_rule(space: &FunctionSpace) -> Result<super::quadrature::QuadratureRule> {
    quadrature(QuadratureKind::Cell, (2 * space.family().degree() + 6).min(12))
}

/// `|| f - exact ||_{L2}` for a scalar function.
pub fn l2_error_scalar(f: &Function, exact: impl Fn([f64; 2]) -> f64) -> Result<f64> {
    let rule = error_rule(f.space())?;
    let mesh = f.space().mesh();
    let mut acc = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let (vals, _, _) = eval_on_cell(f, c, &rule.points);
        for (p, (q, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let d = vals[p] - exact(g.map(*q));
            acc += w * g.det_j * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// `|| f - exact ||_{L2}` for a vector function.
pub fn l2_error_vector(f: &Function, exact: impl Fn([f64; 2]) -> [f64; 2]) -> Result<f64> {
    let rule = error_rule(f.space())?;
    let mesh = f.space().mesh();
    let mut acc = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let (vals, _, _) = eval_on_cell(f, c, &rule.points);
        for (p, (q, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let e = exact(g.map(*q));
            let (d0, d1) = (vals[2 * p] - e[0], vals[2 * p + 1] - e[1]);
            acc += w * g.det_j * (d0 * d0 + d1 * d1);
        }
    }
    Ok(acc.sqrt())
}

/// `|| div f - exact ||_{L2}` for a vector function.
pub fn l2_error_div(f: &Function, exact: impl Fn([f64; 2]) -> f64) -> Result<f64> {
    let rule = error_rule(f.space())?;
    let mesh = f.space().mesh();
    let mut acc = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let (_, _, div) = eval_on_cell(f, c, &rule.points);
        for (p, (q, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let d = div[p] - exact(g.map(*q));
            acc += w * g.det_j * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Cell averages of a scalar function.
pub fn cell_means(f: &Function) -> Result<Vec<f64>> {
    let rule = error_rule(f.space())?;
    let mesh = f.space().mesh();
    (0..mesh.n_cells())
        .map(|c| {
            let (vals, _, _) = eval_on_cell(f, c, &rule.points);
            Ok(rule.weights.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>() * 2.0)
        })
        .collect()
}
