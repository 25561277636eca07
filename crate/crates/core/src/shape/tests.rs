use nalgebra::Vector2;

use super::*;
use crate::image::GrayImage;

fn square() -> Shape {
    Shape::from_xy(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap()
}

#[test]
fn similarity_identity_on_equal_shapes() {
    let s = square();
    let t = estimate_similarity(&s, &s).unwrap();
    assert!((t.scale - 1.0).abs() < 1e-12);
    assert!(t.rotation.abs() < 1e-12);
    assert!(t.translation.norm() < 1e-12);
}

#[test]
fn similarity_pure_translation() {
    let s = square();
    let d = s.translated(Vector2::new(5.0, -3.0));
    let t = estimate_similarity(&s, &d).unwrap();
    assert!((t.scale - 1.0).abs() < 1e-12);
    assert!(t.rotation.abs() < 1e-12);
    assert!((t.translation - Vector2::new(5.0, -3.0)).norm() < 1e-12);
}

#[test]
fn similarity_rejects_degenerate_input() {
    let one = Shape::from_xy(&[(1.0, 1.0)]).unwrap();
    assert!(estimate_similarity(&one, &one).is_err());
    let coincident = Shape::from_xy(&[(2.0, 2.0), (2.0, 2.0)]).unwrap();
    let spread = Shape::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
    assert!(estimate_similarity(&coincident, &spread).is_err());
}

#[test]
fn transform_inverse_round_trips() {
    let t = SimilarityTransform::new(1.7, 0.6, Vector2::new(3.0, -2.0)).unwrap();
    let p = Vector2::new(4.2, -1.1);
    let back = t.inverse().apply(t.apply(p));
    assert!((back - p).norm() < 1e-10);
}

#[test]
fn ransac_without_outliers_matches_least_squares() {
    let src = Shape::from_xy(&[(0.0, 0.0), (4.0, 1.0), (2.0, 5.0), (-3.0, 2.0), (1.0, -2.0)]).unwrap();
    let truth = SimilarityTransform::new(1.3, 0.4, Vector2::new(2.0, 7.0)).unwrap();
    let dst = truth.apply_shape(&src);
    let ls = estimate_similarity(&src, &dst).unwrap();
    let rs = ransac_similarity(&src, &dst, &RansacConfig { threshold: 0.5, iters: 50, seed: 7 }).unwrap();
    assert!((ls.scale - rs.scale).abs() < 1e-10);
    assert!((ls.rotation - rs.rotation).abs() < 1e-10);
    assert!((ls.translation - rs.translation).norm() < 1e-9);
}

#[test]
fn ransac_needs_two_points() {
    let one = Shape::from_xy(&[(1.0, 2.0)]).unwrap();
    assert!(ransac_similarity(&one, &one, &RansacConfig::default()).is_err());
}

#[test]
fn procrustes_identical_shapes() {
    let shapes = vec![square(), square(), square()];
    let out = generalized_procrustes(&shapes, 1e-10, 50).unwrap();
    // Mean equals the normalized input; aligned shapes coincide with it.
    assert!((out.mean.centroid_size() - 1.0).abs() < 1e-12);
    assert!(out.mean.centroid().norm() < 1e-12);
    for a in &out.aligned {
        let resid: f64 = a
            .points()
            .iter()
            .zip(out.mean.points())
            .map(|(p, q)| (p - q).norm_squared())
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-9, "residual {resid}");
    }
}

#[test]
fn procrustes_removes_similarity_motion() {
    let base = Shape::from_xy(&[(0.0, 0.0), (6.0, 1.0), (4.0, 6.0), (-1.0, 4.0)]).unwrap();
    let moved = SimilarityTransform::new(2.1, -0.7, Vector2::new(11.0, -4.0))
        .unwrap()
        .apply_shape(&base);
    let out = generalized_procrustes(&[base, moved], 1e-12, 100).unwrap();
    let r: f64 = out.aligned[0]
        .points()
        .iter()
        .zip(out.aligned[1].points())
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        .sqrt();
    assert!(r < 1e-9, "post-alignment residual {r}");
}

#[test]
fn similarity_basis_is_orthonormal_and_contains_translation() {
    let shapes = vec![
        Shape::from_xy(&[(0.0, 0.0), (6.0, 1.0), (4.0, 6.0), (-1.0, 4.0)]).unwrap(),
        Shape::from_xy(&[(0.2, -0.1), (5.8, 1.3), (4.2, 5.9), (-0.9, 4.2)]).unwrap(),
    ];
    let gpa = generalized_procrustes(&shapes, 1e-10, 100).unwrap();
    let basis = similarity_basis(&gpa.mean, &gpa.aligned).unwrap();
    let gram = basis.transpose() * &basis;
    assert!((gram - nalgebra::DMatrix::identity(4, 4)).norm() < 1e-12);

    // A pure translation of the mean lies exactly in the span.
    let n = gpa.mean.len();
    let mut delta = nalgebra::DVector::zeros(2 * n);
    for i in 0..n {
        delta[2 * i] = 0.3;
        delta[2 * i + 1] = -0.2;
    }
    let resid = &delta - &basis * (basis.transpose() * &delta);
    assert!(resid.norm() < 1e-12);
}

#[test]
fn triangulate_three_points_one_triangle() {
    let tri = Shape::from_xy(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)]).unwrap();
    let mesh = triangulate(&tri).unwrap();
    assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
}

#[test]
fn triangulate_square_two_triangles() {
    let mesh = triangulate(&square()).unwrap();
    assert_eq!(mesh.len(), 2);
    let mut seen = vec![false; 4];
    for t in &mesh.triangles {
        for &i in t {
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn triangulate_rejects_collinear_and_small_inputs() {
    let line = Shape::from_xy(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
    assert!(triangulate(&line).is_err());
    let two = Shape::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
    assert!(triangulate(&two).is_err());
}

#[test]
fn warp_identity_preserves_interior() {
    let img = GrayImage::from_fn(16, 16, |x, y| (x * 7 + y * 3) as f64 % 200.0);
    let s = Shape::from_xy(&[(1.0, 1.0), (14.0, 1.0), (14.0, 14.0), (1.0, 14.0)]).unwrap();
    let mesh = triangulate(&s).unwrap();
    let out = piecewise_affine_warp(&img, &s, &s, &mesh, Interp::Bilinear).unwrap();
    assert_eq!(out.skipped_triangles, 0);
    // Strictly interior pixel must match exactly; outside-hull pixels are 0.
    assert_eq!(out.image.get(7, 7), img.get(7, 7));
    assert_eq!(out.image.get(0, 0), 0.0);
}

#[test]
fn warp_constant_image_stays_constant_inside_hull() {
    let img = GrayImage::from_fn(20, 20, |_, _| 99.0);
    let src = Shape::from_xy(&[(2.0, 2.0), (17.0, 3.0), (16.0, 17.0), (3.0, 16.0)]).unwrap();
    let dst = Shape::from_xy(&[(3.0, 2.0), (16.0, 2.0), (17.0, 16.0), (2.0, 17.0)]).unwrap();
    let mesh = triangulate(&src).unwrap();
    let out = piecewise_affine_warp(&img, &src, &dst, &mesh, Interp::Bilinear).unwrap();
    let center = out.image.get(10, 10);
    assert!((center - 99.0).abs() < 1e-9, "got {center}");
}

#[test]
fn warp_maps_vertices_exactly() {
    // Barycentric identity: each dst vertex maps back to its src vertex.
    let src = Shape::from_xy(&[(2.0, 2.0), (20.0, 4.0), (18.0, 20.0), (4.0, 18.0)]).unwrap();
    let dst = Shape::from_xy(&[(4.0, 3.0), (19.0, 3.0), (19.0, 19.0), (3.0, 19.0)]).unwrap();
    let mesh = triangulate(&src).unwrap();
    for i in 0..src.len() {
        let mapped = map_point_piecewise_affine(&dst, &src, &mesh, dst.point(i)).unwrap();
        assert!((mapped - src.point(i)).norm() < 1e-9);
    }
}

#[test]
fn points_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("idexp-pts-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("s.pts");
    let s = Shape::from_xy(&[(1.25, -3.5), (0.0, 2.0), (7.75, 8.125)]).unwrap();
    s.save_points(&path).unwrap();
    let loaded = Shape::load_points(&path).unwrap();
    assert_eq!(s, loaded);
    std::fs::remove_dir_all(&dir).ok();
}
