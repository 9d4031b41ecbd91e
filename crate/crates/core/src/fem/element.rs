//! Reference elements on the triangle `(0,0), (1,0), (0,1)`.
//!
//! Polynomial elements are built the Ciarlet way: a spanning set of monomials
//! and a list of degree-of-freedom functionals, with the nodal basis obtained
//! by inverting the functional/spanning-set matrix.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::quadrature::{quadrature, QuadratureKind};
use crate::dense::{DenseTensor, LuFactor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementFamily {
    /// Raviart-Thomas; `RT(1)` is the lowest-order space.
    RT(usize),
    DG(usize),
    VectorDG(usize),
    CG(usize),
    /// Facet polynomials of degree `k`, discontinuous between facets.
    Trace(usize),
}

impl ElementFamily {
    pub fn degree(&self) -> usize {
        match *self {
            ElementFamily::RT(k) | ElementFamily::DG(k) | ElementFamily::VectorDG(k) | ElementFamily::CG(k) | ElementFamily::Trace(k) => k,
        }
    }

    /// Local dimension on one triangle.
    pub fn local_dim(&self) -> usize {
        match *self {
            ElementFamily::RT(k) => k * (k + 2),
            ElementFamily::DG(k) | ElementFamily::CG(k) => (k + 1) * (k + 2) / 2,
            ElementFamily::VectorDG(k) => (k + 1) * (k + 2),
            ElementFamily::Trace(k) => 3 * (k + 1),
        }
    }

    pub fn value_size(&self) -> usize {
        match self {
            ElementFamily::RT(_) | ElementFamily::VectorDG(_) => 2,
            _ => 1,
        }
    }

    /// Full polynomial degree of the local basis.
    pub fn polynomial_degree(&self) -> usize {
        self.degree()
    }

    pub fn is_trace(&self) -> bool {
        matches!(self, ElementFamily::Trace(_))
    }

    pub fn is_discontinuous(&self) -> bool {
        matches!(self, ElementFamily::DG(_) | ElementFamily::VectorDG(_))
    }

    pub fn is_supported(&self) -> bool {
        match *self {
            // RT(3) only arises as the broken target of flux post-processing.
            ElementFamily::RT(k) => (1..=3).contains(&k),
            ElementFamily::DG(k) | ElementFamily::VectorDG(k) | ElementFamily::Trace(k) => k <= 3,
            ElementFamily::CG(k) => (1..=4).contains(&k),
        }
    }
}

/// Monomial exponents `x^a y^b` with `a + b <= degree`, ordered by total degree.
pub(crate) fn monomials(degree: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for d in 0..=degree as i32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

fn powi(x: f64, n: i32) -> f64 {
    if n <= 0 {
        1.0
    } else {
        x.powi(n)
    }
}

/// Values and first derivatives of every monomial at `p`.
fn eval_monomials(exps: &[(i32, i32)], p: [f64; 2], val: &mut [f64], dx: &mut [f64], dy: &mut [f64]) {
    for (m, &(a, b)) in exps.iter().enumerate() {
        let (x, y) = (p[0], p[1]);
        val[m] = powi(x, a) * powi(y, b);
        dx[m] = if a > 0 { a as f64 * powi(x, a - 1) * powi(y, b) } else { 0.0 };
        dy[m] = if b > 0 { b as f64 * powi(x, a) * powi(y, b - 1) } else { 0.0 };
    }
}

/// Shifted Legendre polynomials `P_j(2t - 1)` for `j = 0..=k`.
pub fn legendre(k: usize, t: f64) -> Vec<f64> {
    let z = 2.0 * t - 1.0;
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(z);
    }
    for j in 2..=k {
        let pj = ((2 * j - 1) as f64 * z * out[j - 1] - (j - 1) as f64 * out[j - 2]) / j as f64;
        out.push(pj);
    }
    out
}

pub(crate) const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Endpoints `(A, B)` of reference edge `e`.
pub(crate) fn ref_edge(e: usize) -> ([f64; 2], [f64; 2]) {
    (REF_VERTICES[(e + 1) % 3], REF_VERTICES[(e + 2) % 3])
}

pub(crate) fn ref_edge_point(e: usize, s: f64) -> [f64; 2] {
    let (a, b) = ref_edge(e);
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

pub(crate) fn ref_edge_length(e: usize) -> f64 {
    if e == 0 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

pub(crate) fn ref_normal(e: usize) -> [f64; 2] {
    let (a, b) = ref_edge(e);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    [dy / len, -dx / len]
}

/// Lagrange lattice in dof order: vertices, edge interiors (A to B), interior.
pub(crate) fn lagrange_points(k: usize) -> Vec<[f64; 2]> {
    if k == 0 {
        return vec![[1.0 / 3.0, 1.0 / 3.0]];
    }
    let mut pts = REF_VERTICES.to_vec();
    for e in 0..3 {
        for m in 1..k {
            pts.push(ref_edge_point(e, m as f64 / k as f64));
        }
    }
    for j in 1..k {
        for i in 1..k - j {
            pts.push([i as f64 / k as f64, j as f64 / k as f64]);
        }
    }
    pts
}

/// Basis values and derivatives at a set of reference points.
///
/// Layouts: `values[(p * dim + i) * vs + c]`, `derivs[((p * dim + i) * vs + c) * 2 + d]`.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub npts: usize,
    pub dim: usize,
    pub value_size: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl Tabulation {
    #[inline]
    pub fn value(&self, p: usize, i: usize, c: usize) -> f64 {
        self.values[(p * self.dim + i) * self.value_size + c]
    }

    #[inline]
    pub fn deriv(&self, p: usize, i: usize, c: usize, d: usize) -> f64 {
        self.derivs[((p * self.dim + i) * self.value_size + c) * 2 + d]
    }

    /// Reference divergence of vector-valued basis function `i`.
    #[inline]
    pub fn div(&self, p: usize, i: usize) -> f64 {
        self.deriv(p, i, 0, 0) + self.deriv(p, i, 1, 1)
    }
}

/// A polynomial reference element with an explicit monomial expansion.
#[derive(Debug)]
pub struct ReferenceElement {
    family: ElementFamily,
    exps: Vec<(i32, i32)>,
    /// `coeffs[(i * vs + c) * nmono + m]`
    coeffs: Vec<f64>,
    dim: usize,
    value_size: usize,
}

type VecPoly = Vec<Vec<f64>>; // [component][monomial]

impl ReferenceElement {
    /// Shared reference element for `family` (constructed once per process).
    pub fn get(family: ElementFamily) -> Result<Arc<ReferenceElement>> {
        static CACHE: OnceLock<Mutex<HashMap<ElementFamily, Arc<ReferenceElement>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(e) = cache.lock().unwrap().get(&family) {
            return Ok(e.clone());
        }
        let e = Arc::new(Self::build(family)?);
        cache.lock().unwrap().insert(family, e.clone());
        Ok(e)
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_size(&self) -> usize {
        self.value_size
    }

    fn build(family: ElementFamily) -> Result<Self> {
        if !family.is_supported() {
            return Err(Error::UnsupportedElement(format!("{family:?}")));
        }
        match family {
            ElementFamily::DG(k) | ElementFamily::CG(k) => Self::lagrange(family, k),
            ElementFamily::VectorDG(k) => {
                let scalar = Self::lagrange(ElementFamily::DG(k), k)?;
                let nm = scalar.exps.len();
                let nd = scalar.dim;
                let mut coeffs = vec![0.0; 2 * nd * 2 * nm];
                for comp in 0..2 {
                    for i in 0..nd {
                        let bi = comp * nd + i;
                        coeffs[(bi * 2 + comp) * nm..(bi * 2 + comp + 1) * nm].copy_from_slice(&scalar.coeffs[i * nm..(i + 1) * nm]);
                    }
                }
                Ok(ReferenceElement { family, exps: scalar.exps, coeffs, dim: 2 * nd, value_size: 2 })
            }
            ElementFamily::RT(k) => Self::raviart_thomas(k),
            ElementFamily::Trace(_) => Err(Error::UnsupportedElement("trace elements live on facets; use tabulate_trace".into())),
        }
    }

    fn lagrange(family: ElementFamily, k: usize) -> Result<Self> {
        let exps = monomials(k);
        let nm = exps.len();
        let pts = lagrange_points(k);
        // D[i][l] = span_l(node_i)
        let mut d = DenseTensor::zeros(&[nm, nm]);
        let (mut v, mut dx, mut dy) = (vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]);
        for (i, p) in pts.iter().enumerate() {
            eval_monomials(&exps, *p, &mut v, &mut dx, &mut dy);
            for l in 0..nm {
                d.set(i, l, v[l]);
            }
        }
        let c = LuFactor::new(&d)?.solve(&DenseTensor::identity(nm));
        let mut coeffs = vec![0.0; nm * nm];
        for i in 0..nm {
            for m in 0..nm {
                coeffs[i * nm + m] = c.get(m, i);
            }
        }
        Ok(ReferenceElement { family, exps, coeffs, dim: nm, value_size: 1 })
    }

    fn raviart_thomas(k: usize) -> Result<Self> {
        let exps = monomials(k);
        let nm = exps.len();
        let index: HashMap<(i32, i32), usize> = exps.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut span: Vec<VecPoly> = Vec::new();
        for &(a, b) in monomials(k - 1).iter() {
            for comp in 0..2 {
                let mut p = vec![vec![0.0; nm]; 2];
                p[comp][index[&(a, b)]] = 1.0;
                span.push(p);
            }
        }
        for b in 0..k as i32 {
            let a = k as i32 - 1 - b;
            let mut p = vec![vec![0.0; nm]; 2];
            p[0][index[&(a + 1, b)]] = 1.0;
            p[1][index[&(a, b + 1)]] = 1.0;
            span.push(p);
        }
        let dim = k * (k + 2);
        assert_eq!(span.len(), dim);

        let eval = |p: &VecPoly, x: [f64; 2]| -> [f64; 2] {
            let (mut v, mut dx, mut dy) = (vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]);
            eval_monomials(&exps, x, &mut v, &mut dx, &mut dy);
            let c0: f64 = p[0].iter().zip(&v).map(|(a, b)| a * b).sum();
            let c1: f64 = p[1].iter().zip(&v).map(|(a, b)| a * b).sum();
            [c0, c1]
        };

        let edge_rule = quadrature(QuadratureKind::Edge, 2 * k)?;
        let cell_rule = quadrature(QuadratureKind::Cell, 2 * k)?;
        let mut d = DenseTensor::zeros(&[dim, dim]);
        for (l, p) in span.iter().enumerate() {
            let mut row = 0;
            for e in 0..3 {
                let n = ref_normal(e);
                for j in 0..k {
                    let mut s = 0.0;
                    for (q, w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                        let v = eval(p, ref_edge_point(e, q[0]));
                        s += w * (v[0] * n[0] + v[1] * n[1]) * legendre(k - 1, q[0])[j];
                    }
                    d.set(row, l, s);
                    row += 1;
                }
            }
            if k >= 2 {
                for &(a, b) in monomials(k - 2).iter() {
                    for comp in 0..2 {
                        let mut s = 0.0;
                        for (q, w) in cell_rule.points.iter().zip(&cell_rule.weights) {
                            let v = eval(p, *q);
                            s += w * v[comp] * powi(q[0], a) * powi(q[1], b);
                        }
                        d.set(row, l, s);
                        row += 1;
                    }
                }
            }
            debug_assert_eq!(row, dim);
        }
        let c = LuFactor::new(&d)?.solve(&DenseTensor::identity(dim));
        let mut coeffs = vec![0.0; dim * 2 * nm];
        for i in 0..dim {
            for (l, p) in span.iter().enumerate() {
                let cli = c.get(l, i);
                if cli == 0.0 {
                    continue;
                }
                for comp in 0..2 {
                    for m in 0..nm {
                        coeffs[(i * 2 + comp) * nm + m] += cli * p[comp][m];
                    }
                }
            }
        }
        Ok(ReferenceElement { family: ElementFamily::RT(k), exps, coeffs, dim, value_size: 2 })
    }

    pub fn tabulate(&self, points: &[[f64; 2]]) -> Tabulation {
        let nm = self.exps.len();
        let vs = self.value_size;
        let (mut v, mut dx, mut dy) = (vec![0.0; nm], vec![0.0; nm], vec![0.0; nm]);
        let mut values = vec![0.0; points.len() * self.dim * vs];
        let mut derivs = vec![0.0; points.len() * self.dim * vs * 2];
        for (p, x) in points.iter().enumerate() {
            eval_monomials(&self.exps, *x, &mut v, &mut dx, &mut dy);
            for i in 0..self.dim {
                for c in 0..vs {
                    let co = &self.coeffs[(i * vs + c) * nm..(i * vs + c + 1) * nm];
                    let mut s = [0.0; 3];
                    for m in 0..nm {
                        if co[m] != 0.0 {
                            s[0] += co[m] * v[m];
                            s[1] += co[m] * dx[m];
                            s[2] += co[m] * dy[m];
                        }
                    }
                    let o = (p * self.dim + i) * vs + c;
                    values[o] = s[0];
                    derivs[o * 2] = s[1];
                    derivs[o * 2 + 1] = s[2];
                }
            }
        }
        Tabulation { npts: points.len(), dim: self.dim, value_size: vs, values, derivs }
    }
}

fn inside_triangle(p: [f64; 2]) -> bool {
    const EPS: f64 = 1e-12;
    p[0] >= -EPS && p[1] >= -EPS && p[0] + p[1] <= 1.0 + EPS
}

/// Tabulates `family` at reference points. Trace families take edge
/// parameters `t` in `[0, 1]` as the first coordinate and return the `k + 1`
/// facet basis functions.
pub fn tabulate(family: ElementFamily, points: &[[f64; 2]]) -> Result<Tabulation> {
    if let ElementFamily::Trace(k) = family {
        if !family.is_supported() {
            return Err(Error::UnsupportedElement(format!("{family:?}")));
        }
        let mut values = Vec::with_capacity(points.len() * (k + 1));
        for p in points {
            if !(-1e-12..=1.0 + 1e-12).contains(&p[0]) || p[1] != 0.0 {
                return Err(Error::OutsideReference { x: p[0], y: p[1] });
            }
            values.extend(legendre(k, p[0]));
        }
        let n = values.len();
        return Ok(Tabulation { npts: points.len(), dim: k + 1, value_size: 1, values, derivs: vec![0.0; 2 * n] });
    }
    if let Some(p) = points.iter().find(|p| !inside_triangle(**p)) {
        return Err(Error::OutsideReference { x: p[0], y: p[1] });
    }
    Ok(ReferenceElement::get(family)?.tabulate(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        for k in 1..=3 {
            assert_eq!(ReferenceElement::get(ElementFamily::RT(k)).unwrap().dim(), k * (k + 2));
        }
        for k in 0..=3 {
            assert_eq!(ReferenceElement::get(ElementFamily::DG(k)).unwrap().dim(), (k + 1) * (k + 2) / 2);
        }
        assert_eq!(ElementFamily::Trace(2).local_dim(), 9);
        assert!(ReferenceElement::get(ElementFamily::RT(4)).is_err());
        assert!(ReferenceElement::get(ElementFamily::CG(0)).is_err());
    }

    #[test]
    fn cg1_kronecker() {
        let t = tabulate(ElementFamily::CG(1), &REF_VERTICES).unwrap();
        for p in 0..3 {
            for i in 0..3 {
                let expect = if p == i { 1.0 } else { 0.0 };
                assert!((t.value(p, i, 0) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dg0_constant() {
        let t = tabulate(ElementFamily::DG(0), &[[0.1, 0.2], [0.7, 0.1]]).unwrap();
        assert!((t.value(0, 0, 0) - 1.0).abs() < 1e-15 && (t.value(1, 0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity() {
        let pts = [[0.1, 0.1], [0.3, 0.5], [0.0, 0.9], [0.25, 0.25]];
        for fam in (1..=4).map(ElementFamily::CG).chain((0..=3).map(ElementFamily::DG)) {
            let t = tabulate(fam, &pts).unwrap();
            for p in 0..pts.len() {
                let s: f64 = (0..t.dim).map(|i| t.value(p, i, 0)).sum();
                assert!((s - 1.0).abs() < 1e-13, "{fam:?}");
            }
        }
    }

    #[test]
    fn rt1_unit_normal_flux() {
        // basis i has normal mean 1 on edge i and zero flux through the others
        let rule = quadrature(QuadratureKind::Edge, 3).unwrap();
        let el = ReferenceElement::get(ElementFamily::RT(1)).unwrap();
        for e in 0..3 {
            let pts: Vec<[f64; 2]> = rule.points.iter().map(|q| ref_edge_point(e, q[0])).collect();
            let t = el.tabulate(&pts);
            let n = ref_normal(e);
            for i in 0..3 {
                let flux: f64 = (0..pts.len()).map(|p| rule.weights[p] * (t.value(p, i, 0) * n[0] + t.value(p, i, 1) * n[1])).sum();
                let expect = if i == e { 1.0 } else { 0.0 };
                assert!((flux - expect).abs() < 1e-13);
                // constant normal component along the edge
                let nc: Vec<f64> = (0..pts.len()).map(|p| t.value(p, i, 0) * n[0] + t.value(p, i, 1) * n[1]).collect();
                assert!(nc.iter().all(|v| (v - nc[0]).abs() < 1e-13));
            }
        }
    }

    #[test]
    fn outside_rejected() {
        assert!(tabulate(ElementFamily::DG(1), &[[0.8, 0.8]]).is_err());
        assert!(tabulate(ElementFamily::Trace(1), &[[1.5, 0.0]]).is_err());
    }

    #[test]
    fn legendre_orthogonal() {
        let rule = quadrature(QuadratureKind::Edge, 8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * legendre(3, p[0])[i] * legendre(3, p[0])[j]).sum();
                let expect = if i == j { 1.0 / (2 * i + 1) as f64 } else { 0.0 };
                assert!((s - expect).abs() < 1e-14);
            }
        }
    }
}
