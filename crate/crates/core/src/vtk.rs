//! Legacy ASCII VTK output: one polygon per element side.

use std::io::Write;

use nalgebra::DVector;

use crate::analysis::StressField;
use crate::assembly::{evaluate_field, Level};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::MATRIX;
use crate::quadrature::side_polygon;

/// Cut elements contribute their chord-bounded side polygons.
fn cell_polygon(level: &Level, e: usize, sub: usize) -> Vec<Point> {
    let corners = level.mesh.element_corners(e);
    match level.cls.cut(e) {
        Some(c) => side_polygon(&corners, c, sub != MATRIX).0,
        None => corners.to_vec(),
    }
}

/// Displacement as point data, von Mises stress and subdomain index as cell
/// data. `stress` must come from [`crate::analysis::von_mises`] on the same
/// level.
pub fn write_vtk<W: Write>(level: &Level, u: &DVector<f64>, stress: &StressField, mut w: W) -> Result<()> {
    let mut cells: Vec<(usize, usize, Vec<Point>)> = Vec::new();
    for s in 0..level.space.num_subdomains() {
        for &e in level.cls.active(s) {
            cells.push((e, s, cell_polygon(level, e, s)));
        }
    }
    if cells.len() != stress.samples.len()
        || cells
            .iter()
            .zip(&stress.samples)
            .any(|(c, s)| c.0 != s.element || c.1 != s.subdomain)
    {
        return Err(Error::InvalidInput("stress field does not match the level".into()));
    }
    let npts: usize = cells.iter().map(|c| c.2.len()).sum();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "unfitted elasticity solution")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {npts} double")?;
    for (_, _, poly) in &cells {
        for p in poly {
            writeln!(w, "{:.9e} {:.9e} 0", p.x, p.y)?;
        }
    }
    let size: usize = cells.iter().map(|c| c.2.len() + 1).sum();
    writeln!(w, "CELLS {} {size}", cells.len())?;
    let mut next = 0;
    for (_, _, poly) in &cells {
        write!(w, "{}", poly.len())?;
        for _ in poly {
            write!(w, " {next}")?;
            next += 1;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for (_, _, poly) in &cells {
        writeln!(w, "{}", if poly.len() == 4 { 9 } else { 7 })?;
    }
    writeln!(w, "CELL_DATA {}", cells.len())?;
    writeln!(w, "SCALARS von_mises double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for s in &stress.samples {
        writeln!(w, "{:.9e}", s.von_mises)?;
    }
    writeln!(w, "SCALARS subdomain int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for (_, s, _) in &cells {
        writeln!(w, "{s}")?;
    }
    writeln!(w, "POINT_DATA {npts}")?;
    writeln!(w, "VECTORS displacement double")?;
    for (e, s, poly) in &cells {
        for p in poly {
            let (v, _) = evaluate_field(&level.space, u, *e, *s, p);
            writeln!(w, "{:.9e} {:.9e} 0", v[0], v[1])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{von_mises, VonMisesFormula};
    use crate::assembly::{build_level, AssemblyOptions, Material};
    use crate::geometry::{EllipseLevelSet, InclusionSet};
    use crate::mesh::MeshLevel;

    #[test]
    fn counts_are_consistent() {
        let inc = InclusionSet::single(EllipseLevelSet::circle(0.5, 0.5, 0.3).unwrap()).unwrap();
        let lv = build_level(&MeshLevel::new(4).unwrap(), &inc, &AssemblyOptions::default()).unwrap();
        let u = DVector::from_element(lv.space.dim(), 1e-3);
        let mat = Material::new(1e5, 4e5, 0.3).unwrap();
        let f = von_mises(&lv, &mat, &u, VonMisesFormula::Full);
        let mut out = Vec::new();
        write_vtk(&lv, &u, &f, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        // 16 elements, 12 of them cut into two sides
        assert!(text.contains("CELL_TYPES 28"));
        assert!(text.contains("POINT_DATA"));
    }
}
