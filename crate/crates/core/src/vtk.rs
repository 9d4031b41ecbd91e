//! Legacy ASCII VTK output for triangle meshes and fields.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{ElementFamily, Function};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataLocation {
    Cell,
    Point,
}

/// One named data array attached to cells or points.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkField {
    pub name: String,
    pub location: DataLocation,
    /// 1 for scalars, 2 for planar vectors (written with a zero third component).
    pub components: usize,
    pub values: Vec<f64>,
}

/// C-style `%.12e` formatting (`1.000000000000e+00`).
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{v:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_section<W: Write>(out: &mut W, fields: &[&VtkField]) -> Result<()> {
    for f in fields {
        if f.components == 1 {
            writeln!(out, "SCALARS {} double 1", f.name).map_err(io)?;
            writeln!(out, "LOOKUP_TABLE default").map_err(io)?;
            for v in &f.values {
                writeln!(out, "{}", sci(*v)).map_err(io)?;
            }
        } else {
            writeln!(out, "VECTORS {} double", f.name).map_err(io)?;
            for v in f.values.chunks(2) {
                writeln!(out, "{} {} {}", sci(v[0]), sci(v[1]), sci(0.0)).map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Writes the mesh with optional cell/point data.
pub fn write_mesh_vtk<W: Write>(mesh: &Mesh, out: &mut W, fields: &[VtkField]) -> Result<()> {
    for f in fields {
        let n = match f.location {
            DataLocation::Cell => mesh.n_cells(),
            DataLocation::Point => mesh.n_vertices(),
        };
        if !(1..=2).contains(&f.components) || f.values.len() != n * f.components {
            return Err(Error::DimensionMismatch { expected: n * f.components, got: f.values.len() });
        }
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!("invalid VTK field name {:?}", f.name)));
        }
    }
    writeln!(out, "# vtk DataFile Version 3.0").map_err(io)?;
    writeln!(out, "slatefem output").map_err(io)?;
    writeln!(out, "ASCII").map_err(io)?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID").map_err(io)?;
    writeln!(out, "POINTS {} double", mesh.n_vertices()).map_err(io)?;
    for p in mesh.vertex_coords() {
        writeln!(out, "{} {} {}", sci(p[0]), sci(p[1]), sci(0.0)).map_err(io)?;
    }
    writeln!(out, "CELLS {} {}", mesh.n_cells(), 4 * mesh.n_cells()).map_err(io)?;
    for c in mesh.cells() {
        writeln!(out, "3 {} {} {}", c[0], c[1], c[2]).map_err(io)?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.n_cells()).map_err(io)?;
    for _ in 0..mesh.n_cells() {
        writeln!(out, "5").map_err(io)?;
    }
    let cell: Vec<&VtkField> = fields.iter().filter(|f| f.location == DataLocation::Cell).collect();
    let point: Vec<&VtkField> = fields.iter().filter(|f| f.location == DataLocation::Point).collect();
    if !cell.is_empty() {
        writeln!(out, "CELL_DATA {}", mesh.n_cells()).map_err(io)?;
        write_section(out, &cell)?;
    }
    if !point.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.n_vertices()).map_err(io)?;
        write_section(out, &point)?;
    }
    Ok(())
}

/// Samples each function into a VTK field: CG functions at vertices, every
/// other family at cell centroids.
pub fn sample_fields(functions: &[(&str, &Function)]) -> Result<(Arc<Mesh>, Vec<VtkField>)> {
    let Some((_, first)) = functions.first() else {
        return Err(Error::InvalidConfig("no functions to export".into()));
    };
    let mesh = first.space().mesh().clone();
    let mut out = Vec::new();
    for (name, f) in functions {
        if !Arc::ptr_eq(f.space().mesh(), &mesh) {
            return Err(Error::InvalidConfig(format!("field {name} lives on a different mesh")));
        }
        let family = f.space().family();
        if family.is_trace() {
            return Err(Error::UnsupportedElement(format!("cannot export trace field {name}")));
        }
        let vs = family.value_size();
        if let ElementFamily::CG(_) = family {
            let mut vals = vec![0.0; mesh.n_vertices()];
            for c in 0..mesh.n_cells() {
                for (i, &v) in mesh.cell_vertices(c).iter().enumerate() {
                    // CG dofs start with the vertex dofs in cell vertex order
                    vals[v] = f.coeffs()[f.space().cell_dofs(c)[i]];
                }
            }
            out.push(VtkField { name: name.to_string(), location: DataLocation::Point, components: 1, values: vals });
        } else {
            let mut vals = Vec::with_capacity(mesh.n_cells() * vs);
            for c in 0..mesh.n_cells() {
                let (v, _, _) = crate::fem::space::eval_on_cell(f, c, &[[1.0 / 3.0, 1.0 / 3.0]]);
                vals.extend(v);
            }
            out.push(VtkField { name: name.to_string(), location: DataLocation::Cell, components: vs, values: vals });
        }
    }
    Ok((mesh, out))
}

/// Writes functions sharing one mesh to a legacy VTK file.
pub fn export_fields(functions: &[(&str, &Function)], path: &Path) -> Result<()> {
    let (mesh, fields) = sample_fields(functions)?;
    let mut buf = Vec::new();
    write_mesh_vtk(&mesh, &mut buf, &fields)?;
    std::fs::write(path, buf).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::fem::{create_space, interpolate_scalar};
    use crate::mesh::build_unit_square;

    #[test]
    fn sci_matches_c_printf() {
        assert_eq!(sci(1.0), "1.000000000000e+00");
        assert_eq!(sci(-0.00123), "-1.230000000000e-03");
        assert_eq!(sci(6.02e123), "6.020000000000e+123");
        assert_eq!(sci(0.0), "0.000000000000e+00");
        assert_eq!(sci(f64::NAN), "nan");
    }

    #[test]
    fn ones_field_cell_data() {
        let mesh = Arc::new(build_unit_square(2).unwrap());
        let s = create_space(&mesh, ElementFamily::DG(0)).unwrap();
        let f = Function::from_coeffs(&s, vec![1.0; 8]).unwrap();
        let (m, fields) = sample_fields(&[("one", &f)]).unwrap();
        let mut buf = Vec::new();
        write_mesh_vtk(&m, &mut buf, &fields).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tail = text.split("CELL_DATA 8\n").nth(1).unwrap();
        let lines: Vec<&str> = tail.lines().skip(2).collect();
        assert_eq!(lines.len(), 8);
        assert!(lines.iter().all(|l| l.parse::<f64>().unwrap() == 1.0));
    }

    #[test]
    fn empty_and_trace_rejected() {
        assert!(sample_fields(&[]).is_err());
        let mesh = Arc::new(build_unit_square(1).unwrap());
        let t = create_space(&mesh, ElementFamily::Trace(0)).unwrap();
        assert!(sample_fields(&[("t", &Function::zeros(&t))]).is_err());
    }

    #[test]
    fn cg_point_data() {
        let mesh = Arc::new(build_unit_square(2).unwrap());
        let s = create_space(&mesh, ElementFamily::CG(2)).unwrap();
        let f = interpolate_scalar(&s, |x| x[0] + 2.0 * x[1]).unwrap();
        let (_, fields) = sample_fields(&[("p", &f)]).unwrap();
        for (v, x) in fields[0].values.iter().zip(mesh.vertex_coords()) {
            assert!((v - (x[0] + 2.0 * x[1])).abs() < 1e-14);
        }
    }
}
