//! Similarity estimation, consensus registration and generalized Procrustes.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Shape, SimilarityTransform};
use crate::error::{Error, Result};

/// Least-squares similarity minimizing `sum ||T(src_k) - dst_k||^2`.
pub fn estimate_similarity(src: &Shape, dst: &Shape) -> Result<SimilarityTransform> {
    let n = src.len();
    if n < 2 {
        return Err(Error::invalid("similarity estimation needs at least 2 points"));
    }
    if dst.len() != n {
        return Err(Error::DimMismatch { context: "similarity point counts", expected: n, got: dst.len() });
    }
    let sc = src.centroid();
    let dc = dst.centroid();
    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut norm = 0.0;
    for (p, q) in src.points().iter().zip(dst.points()) {
        let a = p - sc;
        let b = q - dc;
        dot += a.dot(&b);
        cross += a.x * b.y - a.y * b.x;
        norm += a.norm_squared();
    }
    if norm <= f64::MIN_POSITIVE {
        return Err(Error::invalid("all source points coincide"));
    }
    let scale = (dot * dot + cross * cross).sqrt() / norm;
    if scale <= f64::MIN_POSITIVE {
        return Err(Error::invalid("degenerate similarity: zero optimal scale"));
    }
    let rotation = cross.atan2(dot);
    let (s, c) = rotation.sin_cos();
    let translation = Vector2::new(
        dc.x - scale * (c * sc.x - s * sc.y),
        dc.y - scale * (s * sc.x + c * sc.y),
    );
    SimilarityTransform::new(scale, rotation, translation)
}

#[derive(Debug, Clone)]
pub struct RansacConfig {
    /// Inlier residual threshold in destination units.
    pub threshold: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold: 2.0, iters: 200, seed: 0 }
    }
}

/// Two-point-sample RANSAC followed by a least-squares refit on the
/// consensus set. Deterministic for a fixed seed; ties keep the earliest
/// consensus found.
pub fn ransac_similarity(src: &Shape, dst: &Shape, config: &RansacConfig) -> Result<SimilarityTransform> {
    let n = src.len();
    if n < 2 {
        return Err(Error::invalid("RANSAC needs at least 2 points"));
    }
    if dst.len() != n {
        return Err(Error::DimMismatch { context: "RANSAC point counts", expected: n, got: dst.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..config.iters.max(1) {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        if i == j {
            j = (j + 1) % n;
        }
        let pair_src = Shape::new(vec![src.point(i), src.point(j)])?;
        let pair_dst = Shape::new(vec![dst.point(i), dst.point(j)])?;
        let Ok(t) = estimate_similarity(&pair_src, &pair_dst) else {
            continue;
        };
        let inliers: Vec<usize> = (0..n)
            .filter(|&k| (t.apply(src.point(k)) - dst.point(k)).norm() < config.threshold)
            .collect();
        if inliers.len() > best.len() {
            best = inliers;
        }
        if best.len() == n {
            break;
        }
    }
    if best.len() < 2 {
        return Err(Error::invalid(format!(
            "RANSAC found no consensus of >= 2 points within threshold {}",
            config.threshold
        )));
    }
    let src_in = Shape::new(best.iter().map(|&k| src.point(k)).collect())?;
    let dst_in = Shape::new(best.iter().map(|&k| dst.point(k)).collect())?;
    estimate_similarity(&src_in, &dst_in)
}

#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub mean: Shape,
    pub aligned: Vec<Shape>,
    pub iterations: usize,
}

/// Zero-centroid, unit-centroid-size copy of a shape.
fn normalize(shape: &Shape) -> Result<Shape> {
    let size = shape.centroid_size();
    if size <= f64::MIN_POSITIVE {
        return Err(Error::invalid("degenerate shape: all points coincide"));
    }
    Ok(shape.translated(-shape.centroid()).scaled(1.0 / size))
}

/// Rotation-only alignment of `shape` onto `anchor` (both centered).
fn orient_to(shape: &Shape, anchor: &Shape) -> Shape {
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (p, q) in shape.points().iter().zip(anchor.points()) {
        dot += p.dot(q);
        cross += p.x * q.y - p.y * q.x;
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    Shape {
        points: shape
            .points()
            .iter()
            .map(|p| Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y))
            .collect(),
    }
}

/// Iterative alignment of all shapes to a running mean. The mean is
/// renormalized every pass (zero centroid, unit centroid size, orientation
/// anchored to the first shape) until it moves less than `tol`.
pub fn generalized_procrustes(shapes: &[Shape], tol: f64, max_iters: usize) -> Result<ProcrustesResult> {
    if shapes.len() < 2 {
        return Err(Error::invalid("generalized Procrustes needs at least 2 shapes"));
    }
    let n = shapes[0].len();
    if n < 2 {
        return Err(Error::invalid("generalized Procrustes needs shapes with >= 2 points"));
    }
    for s in shapes {
        if s.len() != n {
            return Err(Error::DimMismatch { context: "Procrustes point counts", expected: n, got: s.len() });
        }
    }
    let anchor = normalize(&shapes[0])?;
    let mut mean = anchor.clone();
    let mut aligned: Vec<Shape> = shapes.to_vec();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        for (a, s) in aligned.iter_mut().zip(shapes) {
            let t = estimate_similarity(s, &mean)?;
            *a = t.apply_shape(s);
        }
        let mut next = Shape { points: vec![Vector2::zeros(); n] };
        for a in &aligned {
            for (i, p) in a.points().iter().enumerate() {
                next.points[i] += p;
            }
        }
        for p in next.points.iter_mut() {
            *p /= aligned.len() as f64;
        }
        let next = orient_to(&normalize(&next)?, &anchor);
        let movement: f64 = mean
            .points()
            .iter()
            .zip(next.points())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        mean = next;
        if movement < tol {
            break;
        }
    }
    for (a, s) in aligned.iter_mut().zip(shapes) {
        let t = estimate_similarity(s, &mean)?;
        *a = t.apply_shape(s);
    }
    Ok(ProcrustesResult { mean, aligned, iterations })
}

/// Orthonormal 4-column basis spanning in-plane similarity motion of the
/// mean shape (scale, rotation, x/y translation), in interleaved layout.
pub fn similarity_basis(mean: &Shape, aligned: &[Shape]) -> Result<DMatrix<f64>> {
    if aligned.is_empty() {
        return Err(Error::invalid("similarity basis needs a nonempty aligned set"));
    }
    if mean.centroid_size() <= f64::MIN_POSITIVE {
        return Err(Error::invalid("degenerate mean shape"));
    }
    let n = mean.len();
    let c = mean.centroid();
    let mut basis = DMatrix::zeros(2 * n, 4);
    for (i, p) in mean.points().iter().enumerate() {
        let pc = p - c;
        basis[(2 * i, 0)] = pc.x;
        basis[(2 * i + 1, 0)] = pc.y;
        basis[(2 * i, 1)] = -pc.y;
        basis[(2 * i + 1, 1)] = pc.x;
        basis[(2 * i, 2)] = 1.0;
        basis[(2 * i + 1, 3)] = 1.0;
    }
    gram_schmidt(&mut basis)?;
    Ok(basis)
}

/// Modified Gram-Schmidt, in place.
pub(crate) fn gram_schmidt(m: &mut DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for prev in 0..c {
            let proj = m.column(c).dot(&m.column(prev));
            let prev_col = m.column(prev).into_owned();
            let mut col = m.column_mut(c);
            col -= prev_col * proj;
        }
        let norm = m.column(c).norm();
        if norm <= 1e-12 {
            return Err(Error::invalid("rank-deficient basis in orthonormalization"));
        }
        let mut col = m.column_mut(c);
        col /= norm;
    }
    Ok(())
}

/// Orthonormalizes the columns of `extra` against the (already
/// orthonormal) `fixed` block, then among themselves. Columns of `extra`
/// that collapse are dropped.
pub(crate) fn orthonormalize_against(fixed: &DMatrix<f64>, extra: &DMatrix<f64>) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for c in 0..extra.ncols() {
        let mut col = extra.column(c).into_owned();
        for fc in 0..fixed.ncols() {
            let proj = col.dot(&fixed.column(fc).into_owned());
            col -= fixed.column(fc) * proj;
        }
        for prev in &kept {
            let proj = col.dot(prev);
            col -= prev * proj;
        }
        let norm = col.norm();
        if norm > 1e-10 {
            kept.push(col / norm);
        }
    }
    let mut out = DMatrix::zeros(extra.nrows(), kept.len());
    for (i, col) in kept.iter().enumerate() {
        out.column_mut(i).copy_from(col);
    }
    out
}
