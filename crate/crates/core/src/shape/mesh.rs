//! Delaunay triangulation of a reference shape.

use spade::{DelaunayTriangulation, Point2 as SpadePoint, Triangulation};

use super::Shape;
use crate::error::{Error, Result};

/// Index triples into a reference shape. Triangles are stored CCW with the
/// smallest vertex index first and the list sorted, so identical input
/// yields identical meshes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriangleMesh {
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self, reference: &Shape) -> Result<()> {
        for t in &self.triangles {
            for &i in t {
                if i >= reference.len() {
                    return Err(Error::invalid(format!(
                        "triangle index {i} out of range for {}-point shape",
                        reference.len()
                    )));
                }
            }
            if signed_area(reference, *t).abs() <= f64::MIN_POSITIVE {
                return Err(Error::invalid(format!("degenerate triangle {t:?}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn signed_area(shape: &Shape, tri: [usize; 3]) -> f64 {
    let a = shape.point(tri[0]);
    let b = shape.point(tri[1]);
    let c = shape.point(tri[2]);
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

/// Delaunay triangulation of the reference points. Requires at least three
/// non-collinear, pairwise distinct points.
pub fn triangulate(reference: &Shape) -> Result<TriangleMesh> {
    let n = reference.len();
    if n < 3 {
        return Err(Error::invalid("triangulation needs at least 3 points"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (reference.point(i) - reference.point(j)).norm() <= f64::MIN_POSITIVE {
                return Err(Error::invalid(format!("duplicate landmark positions at {i} and {j}")));
            }
        }
    }

    let mut dt: DelaunayTriangulation<SpadePoint<f64>> = DelaunayTriangulation::new();
    for p in reference.points() {
        dt.insert(SpadePoint::new(p.x, p.y))
            .map_err(|e| Error::invalid(format!("triangulation insert failed: {e:?}")))?;
    }
    if dt.num_vertices() != n {
        return Err(Error::invalid("triangulation dropped vertices (duplicate points?)"));
    }

    let mut triangles = Vec::new();
    for face in dt.inner_faces() {
        let vs = face.vertices();
        let mut tri = [vs[0].index(), vs[1].index(), vs[2].index()];
        // Canonical order: smallest index first, CCW orientation preserved.
        let min_pos = tri.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i).unwrap();
        tri.rotate_left(min_pos);
        if signed_area(reference, tri) < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    }
    triangles.sort_unstable();

    if triangles.is_empty() {
        return Err(Error::invalid("collinear points admit no triangulation"));
    }
    let mesh = TriangleMesh { triangles };
    mesh.validate(reference)?;
    Ok(mesh)
}
