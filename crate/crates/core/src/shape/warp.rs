//! Piecewise-affine image warping over a landmark triangulation.

use nalgebra::Vector2;

use super::mesh::signed_area;
use super::{Shape, TriangleMesh};
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone)]
pub struct Warped {
    pub image: GrayImage,
    /// Triangles skipped because they were degenerate at warp time.
    pub skipped_triangles: usize,
}

fn barycentric(
    p: Vector2<f64>,
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
) -> Option<[f64; 3]> {
    let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if det.abs() <= f64::MIN_POSITIVE {
        return None;
    }
    let beta = ((p.x - a.x) * (c.y - a.y) - (p.y - a.y) * (c.x - a.x)) / det;
    let gamma = ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) / det;
    Some([1.0 - beta - gamma, beta, gamma])
}

/// For every destination pixel inside the hull of `dst`, looks up the
/// matching source location through the shared triangulation and samples
/// the input image there; pixels outside the hull stay 0.
pub fn piecewise_affine_warp(
    image: &GrayImage,
    src: &Shape,
    dst: &Shape,
    mesh: &TriangleMesh,
    interp: Interp,
) -> Result<Warped> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::invalid("cannot warp an empty image"));
    }
    if src.len() != dst.len() {
        return Err(Error::DimMismatch { context: "warp shape point counts", expected: src.len(), got: dst.len() });
    }
    mesh.validate(src)?;
    for t in &mesh.triangles {
        for &i in t {
            if i >= dst.len() {
                return Err(Error::invalid(format!("triangle index {i} out of range for dst shape")));
            }
        }
    }

    let mut out = GrayImage::zeros(image.width(), image.height());
    let mut claimed = vec![false; image.width() * image.height()];
    let mut skipped = 0usize;
    const EDGE_EPS: f64 = 1e-9;

    for tri in &mesh.triangles {
        if signed_area(dst, *tri).abs() <= f64::MIN_POSITIVE {
            skipped += 1;
            continue;
        }
        let (da, db, dc) = (dst.point(tri[0]), dst.point(tri[1]), dst.point(tri[2]));
        let (sa, sb, sc) = (src.point(tri[0]), src.point(tri[1]), src.point(tri[2]));
        let x_min = da.x.min(db.x).min(dc.x).floor().max(0.0) as usize;
        let x_max = (da.x.max(db.x).max(dc.x).ceil() as usize).min(image.width() - 1);
        let y_min = da.y.min(db.y).min(dc.y).floor().max(0.0) as usize;
        let y_max = (da.y.max(db.y).max(dc.y).ceil() as usize).min(image.height() - 1);
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let idx = y * image.width() + x;
                if claimed[idx] {
                    continue;
                }
                let p = Vector2::new(x as f64, y as f64);
                let Some(bary) = barycentric(p, da, db, dc) else {
                    continue;
                };
                if bary.iter().any(|&w| w < -EDGE_EPS) {
                    continue;
                }
                let sp = sa * bary[0] + sb * bary[1] + sc * bary[2];
                let value = match interp {
                    Interp::Bilinear => image.sample(sp.x, sp.y),
                    Interp::Nearest => image.sample_nearest(sp.x, sp.y),
                };
                out.set(x, y, value);
                claimed[idx] = true;
            }
        }
    }

    Ok(Warped { image: out, skipped_triangles: skipped })
}

/// Maps a single point through the piecewise-affine warp defined by
/// `from -> to`. Points outside the hull use the affine map of the
/// best-covering triangle (largest minimum barycentric coordinate), which
/// extrapolates boundary motion.
pub fn map_point_piecewise_affine(
    from: &Shape,
    to: &Shape,
    mesh: &TriangleMesh,
    p: Vector2<f64>,
) -> Result<Vector2<f64>> {
    let mut best: Option<([f64; 3], usize, f64)> = None;
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let (a, b, c) = (from.point(tri[0]), from.point(tri[1]), from.point(tri[2]));
        let Some(bary) = barycentric(p, a, b, c) else {
            continue;
        };
        let min_w = bary[0].min(bary[1]).min(bary[2]);
        if best.map_or(true, |(_, _, w)| min_w > w) {
            best = Some((bary, ti, min_w));
        }
    }
    let (bary, ti, _) = best.ok_or_else(|| Error::invalid("no usable triangle for point mapping"))?;
    let tri = mesh.triangles[ti];
    Ok(to.point(tri[0]) * bary[0] + to.point(tri[1]) * bary[1] + to.point(tri[2]) * bary[2])
}
