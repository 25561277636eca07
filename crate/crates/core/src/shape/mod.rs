//! Landmark shapes, similarity transforms and registration.

mod align;
mod mesh;
mod warp;

pub use align::{
    estimate_similarity, generalized_procrustes, ransac_similarity, similarity_basis,
    ProcrustesResult, RansacConfig,
};
pub use mesh::{triangulate, TriangleMesh};
pub(crate) use align::orthonormalize_against;
pub use warp::{map_point_piecewise_affine, piecewise_affine_warp, Interp, Warped};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Vector2};

use crate::error::{Error, Result};

/// Ordered 2D landmark set in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    points: Vec<Vector2<f64>>,
}

impl Shape {
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self> {
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::NonFinite("shape coordinates"));
        }
        Ok(Self { points })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Vector2::new(x, y)).collect())
    }

    /// Interleaved vector layout `(x0, y0, x1, y1, ...)`.
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 2 != 0 {
            return Err(Error::invalid("interleaved shape vector must have even length"));
        }
        Self::new((0..v.len() / 2).map(|i| Vector2::new(v[2 * i], v[2 * i + 1])).collect())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            v[2 * i] = p.x;
            v[2 * i + 1] = p.y;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vector2<f64> {
        self.points[i]
    }

    pub fn set_point(&mut self, i: usize, p: Vector2<f64>) {
        self.points[i] = p;
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let mut c = Vector2::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// Root sum of squared distances to the centroid.
    pub fn centroid_size(&self) -> f64 {
        let c = self.centroid();
        self.points.iter().map(|p| (p - c).norm_squared()).sum::<f64>().sqrt()
    }

    pub fn bounding_box(&self) -> (Vector2<f64>, Vector2<f64>) {
        let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, t: Vector2<f64>) -> Shape {
        Shape { points: self.points.iter().map(|p| p + t).collect() }
    }

    pub fn scaled(&self, s: f64) -> Shape {
        Shape { points: self.points.iter().map(|p| p * s).collect() }
    }

    /// Plain text format: point count on the first line, then `x y` pairs.
    pub fn save_points(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", self.points.len())?;
        for p in &self.points {
            writeln!(out, "{} {}", p.x, p.y)?;
        }
        Ok(())
    }

    pub fn load_points(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::schema("empty points file"))??
            .trim()
            .parse()
            .map_err(|_| Error::schema("first line of points file must be the point count"))?;
        let mut points = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::schema(format!("bad points line: {line:?}")))?;
            let y: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::schema(format!("bad points line: {line:?}")))?;
            points.push(Vector2::new(x, y));
        }
        if points.len() != n {
            return Err(Error::schema(format!(
                "points file promised {n} points, found {}",
                points.len()
            )));
        }
        Shape::new(points)
    }
}

/// Four-parameter similarity: `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Vector2<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: 0.0, translation: Vector2::zeros() }
    }

    pub fn new(scale: f64, rotation: f64, translation: Vector2<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("similarity scale must be > 0, got {scale}")));
        }
        if !rotation.is_finite() || !translation.x.is_finite() || !translation.y.is_finite() {
            return Err(Error::NonFinite("similarity parameters"));
        }
        Ok(Self { scale, rotation, translation })
    }

    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.rotation.sin_cos();
        Vector2::new(
            self.scale * (c * p.x - s * p.y) + self.translation.x,
            self.scale * (s * p.x + c * p.y) + self.translation.y,
        )
    }

    pub fn apply_shape(&self, shape: &Shape) -> Shape {
        Shape { points: shape.points.iter().map(|&p| self.apply(p)).collect() }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let (s, c) = (-self.rotation).sin_cos();
        let t = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: -self.rotation,
            translation: Vector2::new(
                -inv_scale * (c * t.x - s * t.y),
                -inv_scale * (s * t.x + c * t.y),
            ),
        }
    }
}

#[cfg(test)]
mod tests;
