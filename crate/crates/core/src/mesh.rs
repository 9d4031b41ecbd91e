//! Structured triangulations of the unit square.
//!
//! Cells are counter-clockwise triangles. Local edge `e` of a cell is the edge
//! opposite local vertex `e`, traversed from vertex `(e+1)%3` to `(e+2)%3`.
//! Every facet stores its endpoints sorted by global vertex index; that order
//! defines the facet's global parameter direction and its global normal.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetKind {
    Interior,
    Exterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryLabel {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertex_coords: Vec<[f64; 2]>,
    cell_vertices: Vec<[usize; 3]>,
    cell_facets: Vec<[usize; 3]>,
    facet_vertices: Vec<[usize; 2]>,
    facet_cells: Vec<Vec<usize>>,
    facet_local_index: Vec<Vec<usize>>,
    exterior_label: Vec<Option<BoundaryLabel>>,
    /// Subdivisions per side for meshes built by [`build_unit_square`].
    subdivisions: usize,
}

/// Affine map data of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub jacobian: [[f64; 2]; 2],
    pub det_j: f64,
    pub inv_jt: [[f64; 2]; 2],
    pub facet_normals: [[f64; 2]; 3],
    pub facet_lengths: [f64; 3],
    pub origin: [f64; 2],
}

impl CellGeometry {
    pub fn from_vertices(v: [[f64; 2]; 3]) -> Self {
        let j = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        // inverse transpose of J
        let inv_jt = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        let mut facet_normals = [[0.0; 2]; 3];
        let mut facet_lengths = [0.0; 3];
        for e in 0..3 {
            let a = v[(e + 1) % 3];
            let b = v[(e + 2) % 3];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            facet_lengths[e] = len;
            facet_normals[e] = [dy / len, -dx / len];
        }
        CellGeometry { jacobian: j, det_j: det, inv_jt, facet_normals, facet_lengths, origin: v[0] }
    }

    /// Maps a reference point to physical coordinates.
    #[inline]
    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [self.origin[0] + j[0][0] * xi[0] + j[0][1] * xi[1], self.origin[1] + j[1][0] * xi[0] + j[1][1] * xi[1]]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det_j.abs()
    }
}

/// Builds the `n x n` grid of the unit square, each square split along its
/// lower-left to upper-right diagonal. All exterior facets start as Dirichlet.
pub fn build_unit_square(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMeshSize(n));
    }
    let np = n + 1;
    let mut vertex_coords = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertex_coords.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut cell_vertices = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * np + i;
            let v10 = v00 + 1;
            let v01 = v00 + np;
            let v11 = v01 + 1;
            cell_vertices.push([v00, v10, v11]);
            cell_vertices.push([v00, v11, v01]);
        }
    }
    Ok(Mesh::from_cells(vertex_coords, cell_vertices, n))
}

impl Mesh {
    fn from_cells(vertex_coords: Vec<[f64; 2]>, cell_vertices: Vec<[usize; 3]>, subdivisions: usize) -> Self {
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut facet_vertices = Vec::new();
        let mut facet_cells: Vec<Vec<usize>> = Vec::new();
        let mut facet_local_index: Vec<Vec<usize>> = Vec::new();
        let mut cell_facets = Vec::with_capacity(cell_vertices.len());
        for (c, cv) in cell_vertices.iter().enumerate() {
            let mut cf = [0; 3];
            for (e, slot) in cf.iter_mut().enumerate() {
                let a = cv[(e + 1) % 3];
                let b = cv[(e + 2) % 3];
                let key = (a.min(b), a.max(b));
                let f = *lookup.entry(key).or_insert_with(|| {
                    facet_vertices.push([key.0, key.1]);
                    facet_cells.push(Vec::with_capacity(2));
                    facet_local_index.push(Vec::with_capacity(2));
                    facet_vertices.len() - 1
                });
                facet_cells[f].push(c);
                facet_local_index[f].push(e);
                *slot = f;
            }
            cell_facets.push(cf);
        }
        let exterior_label = facet_cells.iter().map(|cells| if cells.len() == 1 { Some(BoundaryLabel::Dirichlet) } else { None }).collect();
        Mesh { vertex_coords, cell_vertices, cell_facets, facet_vertices, facet_cells, facet_local_index, exterior_label, subdivisions }
    }

    pub fn n_cells(&self) -> usize {
        self.cell_vertices.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_coords.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facet_vertices.len()
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    /// Characteristic mesh size `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.subdivisions as f64
    }

    pub fn vertex_coords(&self) -> &[[f64; 2]] {
        &self.vertex_coords
    }

    pub fn cell_vertices(&self, cell: usize) -> [usize; 3] {
        self.cell_vertices[cell]
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cell_vertices
    }

    pub fn cell_facets(&self, cell: usize) -> [usize; 3] {
        self.cell_facets[cell]
    }

    /// Facet endpoints, lower global index first.
    pub fn facet_vertices(&self, facet: usize) -> [usize; 2] {
        self.facet_vertices[facet]
    }

    /// Incident cells; for interior facets the first entry is the `+` side
    /// (lower cell index).
    pub fn facet_cells(&self, facet: usize) -> &[usize] {
        &self.facet_cells[facet]
    }

    pub fn facet_local_index(&self, facet: usize) -> &[usize] {
        &self.facet_local_index[facet]
    }

    pub fn facet_kind(&self, facet: usize) -> FacetKind {
        if self.facet_cells[facet].len() == 2 {
            FacetKind::Interior
        } else {
            FacetKind::Exterior
        }
    }

    pub fn exterior_label(&self, facet: usize) -> Option<BoundaryLabel> {
        self.exterior_label[facet]
    }

    pub fn facet_midpoint(&self, facet: usize) -> [f64; 2] {
        let [a, b] = self.facet_vertices[facet];
        let (pa, pb) = (self.vertex_coords[a], self.vertex_coords[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let [a, b] = self.facet_vertices[facet];
        let (pa, pb) = (self.vertex_coords[a], self.vertex_coords[b]);
        (pb[0] - pa[0]).hypot(pb[1] - pa[1])
    }

    /// Unit normal of the facet obtained by rotating the low-to-high tangent
    /// clockwise.
    pub fn facet_global_normal(&self, facet: usize) -> [f64; 2] {
        let [a, b] = self.facet_vertices[facet];
        let (pa, pb) = (self.vertex_coords[a], self.vertex_coords[b]);
        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = dx.hypot(dy);
        [dy / len, -dx / len]
    }

    /// Whether local edge `e` of `cell` runs against its facet's global
    /// direction. When it does, the cell's outward normal is the negated
    /// global normal.
    #[inline]
    pub fn edge_reversed(&self, cell: usize, e: usize) -> bool {
        let cv = self.cell_vertices[cell];
        cv[(e + 1) % 3] > cv[(e + 2) % 3]
    }

    pub fn exterior_facets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_facets()).filter(|&f| self.facet_cells[f].len() == 1)
    }

    pub fn interior_facets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_facets()).filter(|&f| self.facet_cells[f].len() == 2)
    }

    pub fn facets_with_label(&self, label: BoundaryLabel) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_facets()).filter(move |&f| self.exterior_label[f] == Some(label))
    }

    /// Geometry of a cell, bounds-checked.
    pub fn cell_geometry(&self, cell: usize) -> Result<CellGeometry> {
        if cell >= self.n_cells() {
            return Err(Error::OutOfRange { index: cell, len: self.n_cells() });
        }
        Ok(self.geometry(cell))
    }

    #[inline]
    pub(crate) fn geometry(&self, cell: usize) -> CellGeometry {
        let cv = self.cell_vertices[cell];
        CellGeometry::from_vertices([self.vertex_coords[cv[0]], self.vertex_coords[cv[1]], self.vertex_coords[cv[2]]])
    }

    /// Relabels every exterior facet by evaluating `predicate` at its midpoint.
    pub fn mark_boundary<F>(&self, predicate: F) -> Result<Mesh>
    where
        F: Fn([f64; 2]) -> Option<BoundaryLabel>,
    {
        let mut out = self.clone();
        for f in self.exterior_facets() {
            let mid = self.facet_midpoint(f);
            match predicate(mid) {
                Some(label) => out.exterior_label[f] = Some(label),
                None => return Err(Error::UnlabeledFacet { facet: f, x: mid[0], y: mid[1] }),
            }
        }
        Ok(out)
    }

    /// Writes points and triangle cells as legacy ASCII VTK.
    pub fn write_vtk<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        crate::vtk::write_mesh_vtk(self, out, &[])
    }
}

/// Free-function form of [`Mesh::cell_geometry`].
pub fn cell_geometry(mesh: &Mesh, cell: usize) -> Result<CellGeometry> {
    mesh.cell_geometry(cell)
}

/// Free-function form of [`Mesh::mark_boundary`].
pub fn mark_boundary<F>(mesh: &Mesh, predicate: F) -> Result<Mesh>
where
    F: Fn([f64; 2]) -> Option<BoundaryLabel>,
{
    mesh.mark_boundary(predicate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_square() {
        let m = build_unit_square(1).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices(), m.n_facets()), (2, 4, 5));
        assert_eq!(m.interior_facets().count(), 1);
        assert_eq!(m.exterior_facets().count(), 4);
    }

    #[test]
    fn counts_and_euler_n2() {
        let m = build_unit_square(2).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices(), m.n_facets()), (8, 9, 16));
        let euler = m.n_vertices() as i64 - m.n_facets() as i64 + m.n_cells() as i64;
        assert_eq!(euler, 1);
    }

    #[test]
    fn zero_size_rejected() {
        assert_eq!(build_unit_square(0), Err(Error::InvalidMeshSize(0)));
    }

    #[test]
    fn topology_walk_n4() {
        let m = build_unit_square(4).unwrap();
        assert_eq!(m.n_cells(), 32);
        for f in 0..m.n_facets() {
            let cells = m.facet_cells(f);
            let mid = m.facet_midpoint(f);
            let on_boundary = mid[0].abs() < 1e-14 || mid[1].abs() < 1e-14 || (mid[0] - 1.0).abs() < 1e-14 || (mid[1] - 1.0).abs() < 1e-14;
            assert_eq!(cells.len(), if on_boundary { 1 } else { 2 });
            // both incident cells agree on the vertex pair
            for (&c, &e) in cells.iter().zip(m.facet_local_index(f)) {
                let cv = m.cell_vertices(c);
                let (a, b) = (cv[(e + 1) % 3], cv[(e + 2) % 3]);
                assert_eq!([a.min(b), a.max(b)], m.facet_vertices(f));
            }
            if cells.len() == 2 {
                assert!(cells[0] < cells[1]);
            }
        }
    }

    #[test]
    fn reference_cell_geometry() {
        let g = CellGeometry::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(g.jacobian, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(g.det_j, 1.0);
        let h = 0.25;
        let g = CellGeometry::from_vertices([[0.0, 0.0], [h, 0.0], [0.0, h]]);
        assert!((g.det_j - h * h).abs() < 1e-15);
    }

    #[test]
    fn outward_normals() {
        let m = build_unit_square(4).unwrap();
        for c in 0..m.n_cells() {
            let g = m.cell_geometry(c).unwrap();
            assert!(g.det_j > 0.0);
            let cv = m.cell_vertices(c);
            let p: Vec<[f64; 2]> = cv.iter().map(|&v| m.vertex_coords()[v]).collect();
            let cen = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            for e in 0..3 {
                let a = p[(e + 1) % 3];
                let b = p[(e + 2) % 3];
                let mid = [0.5 * (a[0] + b[0]) - cen[0], 0.5 * (a[1] + b[1]) - cen[1]];
                let n = g.facet_normals[e];
                assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-14);
                assert!(n[0] * mid[0] + n[1] * mid[1] > 0.0);
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                assert!((g.facet_lengths[e] - len).abs() < 1e-14);
            }
        }
        assert!(m.cell_geometry(m.n_cells()).is_err());
    }

    #[test]
    fn interior_normals_opposite() {
        let m = build_unit_square(3).unwrap();
        for f in m.interior_facets() {
            let cells = m.facet_cells(f);
            let li = m.facet_local_index(f);
            let n0 = m.geometry(cells[0]).facet_normals[li[0]];
            let n1 = m.geometry(cells[1]).facet_normals[li[1]];
            assert!((n0[0] + n1[0]).abs() < 1e-14 && (n0[1] + n1[1]).abs() < 1e-14);
            // exactly one side runs against the global direction
            assert_ne!(m.edge_reversed(cells[0], li[0]), m.edge_reversed(cells[1], li[1]));
        }
    }

    #[test]
    fn boundary_marking() {
        let m = build_unit_square(2).unwrap();
        assert_eq!(m.facets_with_label(BoundaryLabel::Neumann).count(), 0);
        let left = |p: [f64; 2]| Some(if p[0].abs() < 1e-12 { BoundaryLabel::Neumann } else { BoundaryLabel::Dirichlet });
        let m2 = m.mark_boundary(left).unwrap();
        assert_eq!(m2.facets_with_label(BoundaryLabel::Neumann).count(), 2);
        let m3 = m2.mark_boundary(left).unwrap();
        assert_eq!(m2, m3);
        let partial = |p: [f64; 2]| if p[1] < 0.5 { Some(BoundaryLabel::Dirichlet) } else { None };
        assert!(matches!(m.mark_boundary(partial), Err(Error::UnlabeledFacet { .. })));
    }

    proptest! {
        #[test]
        fn area_sums_to_one(n in 1usize..12) {
            let m = build_unit_square(n).unwrap();
            let area: f64 = (0..m.n_cells()).map(|c| m.geometry(c).det_j.abs() / 2.0).sum();
            prop_assert!((area - 1.0).abs() < 1e-12);
            let euler = m.n_vertices() as i64 - m.n_facets() as i64 + m.n_cells() as i64;
            prop_assert_eq!(euler, 1);
        }
    }
}
