use nalgebra::{DMatrix, DVector};

use super::template::build_template;
use super::*;
use crate::image::GrayImage;

fn octagon(cx: f64, cy: f64, r: f64) -> Shape {
    let pts: Vec<(f64, f64)> = (0..8)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 8.0;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    Shape::from_xy(&pts).unwrap()
}

fn smooth_texture(width: usize, height: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        120.0 + 60.0 * (xf / 11.0).sin() + 50.0 * (yf / 13.0).cos() + 0.4 * xf - 0.2 * yf
    })
}

fn single_example_template() -> (AamTemplate, GrayImage) {
    // First pass learns the frame; second pass renders the texture directly
    // on that frame so the training shape coincides with the base shape.
    let shape = octagon(40.0, 40.0, 25.0);
    let image = smooth_texture(80, 80);
    let probe = build_template(
        &[LabeledImage { identity: "a".into(), image, shape }],
        &TrainConfig { backend: BackendSpec::Pca { components: 0 }, ..Default::default() },
    )
    .unwrap();
    let frame_image = smooth_texture(probe.template.width(), probe.template.height());
    let tmpl = build_template(
        &[LabeledImage {
            identity: "a".into(),
            image: frame_image.clone(),
            shape: probe.base_shape.clone(),
        }],
        &TrainConfig { backend: BackendSpec::Pca { components: 0 }, ..Default::default() },
    )
    .unwrap();
    (tmpl, frame_image)
}

#[test]
fn template_from_single_image_at_base_shape_is_that_image() {
    let (tmpl, frame_image) = single_example_template();
    let mut checked = 0;
    for y in 0..tmpl.template.height() {
        for x in 0..tmpl.template.width() {
            let t = tmpl.template.get(x, y);
            if t != 0.0 {
                assert!((t - frame_image.get(x, y)).abs() < 1e-9);
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "hull unexpectedly small: {checked}");
}

#[test]
fn hessian_matches_sum_of_outer_products() {
    let (tmpl, _) = single_example_template();
    let h_gram = tmpl.hessian_main();
    let q = h_gram.ncols();
    let mut h_outer = DMatrix::zeros(q, q);
    for i in 0..tmpl.hull_pixel_count() {
        let row = tmpl.sd_main.row(i).transpose();
        h_outer += &row * row.transpose();
    }
    assert!((h_gram - h_outer).norm() < 1e-8);
}

#[test]
fn constant_template_takes_regularization_path() {
    let shape = octagon(40.0, 40.0, 25.0);
    let flat = GrayImage::from_fn(80, 80, |_, _| 0.0);
    let tmpl = build_template(
        &[LabeledImage { identity: "a".into(), image: flat, shape }],
        &TrainConfig { backend: BackendSpec::Pca { components: 0 }, ..Default::default() },
    )
    .unwrap();
    assert!(!tmpl.warnings.is_empty(), "singular Hessian should warn");
    assert!(tmpl.chol_main.is_some(), "regularized factorization should exist");
}

#[test]
fn pca_update_is_zero_at_zero_residual() {
    let (tmpl, frame_image) = single_example_template();
    let q = match &tmpl.backend {
        BackendModel::Pca { basis } => basis.ncols(),
        _ => unreachable!(),
    };
    let dp = ic_update_pca(&tmpl, &frame_image, &DVector::zeros(q)).unwrap();
    assert!(dp.norm() < 1e-6, "residual-free update should vanish, got {}", dp.norm());
}

#[test]
fn small_hull_is_rejected() {
    let tiny = octagon(10.0, 10.0, 4.0);
    let img = smooth_texture(20, 20);
    let err = build_template(
        &[LabeledImage { identity: "a".into(), image: img, shape: tiny }],
        &TrainConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("too small"), "got: {err}");
}

#[test]
fn compose_with_zero_increment_is_identity() {
    let (tmpl, _) = single_example_template();
    let q = match &tmpl.backend {
        BackendModel::Pca { basis } => basis.ncols(),
        _ => unreachable!(),
    };
    let params = WarpParams::Pca { p: vec![DVector::from_fn(q, |i, _| 0.1 * (i as f64 + 1.0))] };
    let delta = ParamDelta::Pca { dp: vec![DVector::zeros(q)] };
    let out = compose_and_project(&tmpl, &params, &delta).unwrap();
    let WarpParams::Pca { p } = out else { unreachable!() };
    let WarpParams::Pca { p: orig } = &params else { unreachable!() };
    assert!((&p[0] - &orig[0]).norm() < 1e-9);
}

#[test]
fn texture_estimation_recovers_planted_coefficients() {
    // Two-example template so a texture basis exists.
    let shape = octagon(40.0, 40.0, 25.0);
    let img_a = smooth_texture(80, 80);
    let img_b = GrayImage::from_fn(80, 80, |x, y| {
        200.0 - 0.5 * x as f64 + 0.3 * y as f64
    });
    let tmpl = build_template(
        &[
            LabeledImage { identity: "a".into(), image: img_a, shape: shape.clone() },
            LabeledImage { identity: "b".into(), image: img_b, shape: shape.clone() },
        ],
        &TrainConfig {
            backend: BackendSpec::Pca { components: 0 },
            texture_components: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(tmpl.texture_basis.ncols(), 1);

    // Render "template + c * basis" as an image and recover c.
    let c_true = 7.5;
    let mut img = tmpl.template.clone();
    for i in 0..tmpl.hull_pixel_count() {
        let (x, y) = (tmpl.hull.xs[i], tmpl.hull.ys[i]);
        img.set(x, y, img.get(x, y) + c_true * tmpl.texture_basis[(i, 0)]);
    }
    let q = match &tmpl.backend {
        BackendModel::Pca { basis } => basis.ncols(),
        _ => unreachable!(),
    };
    let params = WarpParams::Pca { p: vec![DVector::zeros(q)] };
    let coeffs = estimate_texture(&tmpl, &[img], &params).unwrap();
    assert!((coeffs[0][0] - c_true).abs() < 1e-8, "got {}", coeffs[0][0]);

    // And the template itself has zero coefficients.
    let zero = estimate_texture(&tmpl, &[tmpl.template.clone()], &params).unwrap();
    assert!(zero[0].norm() < 1e-8);
}

#[test]
fn texture_estimation_requires_a_basis() {
    let (tmpl, frame_image) = single_example_template();
    let q = match &tmpl.backend {
        BackendModel::Pca { basis } => basis.ncols(),
        _ => unreachable!(),
    };
    let params = WarpParams::Pca { p: vec![DVector::zeros(q)] };
    assert!(estimate_texture(&tmpl, &[frame_image], &params).is_err());
}

#[test]
fn update_rejects_out_of_bounds_shape() {
    let (tmpl, frame_image) = single_example_template();
    let q = match &tmpl.backend {
        BackendModel::Pca { basis } => basis.ncols(),
        _ => unreachable!(),
    };
    // Slam the translation components far outside the image.
    let mut p = DVector::zeros(q);
    p[2] = 1e4;
    let err = ic_update_pca(&tmpl, &frame_image, &p).unwrap_err();
    assert!(matches!(err, crate::Error::OutOfBounds { .. }), "got: {err}");
}

#[test]
fn template_round_trips_through_disk() {
    let (tmpl, _) = single_example_template();
    let dir = std::env::temp_dir().join(format!("idexp-tmpl-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tmpl.json");
    tmpl.save(&path).unwrap();
    let loaded = AamTemplate::load(&path).unwrap();
    assert_eq!(loaded.base_shape, tmpl.base_shape);
    assert_eq!(loaded.mesh, tmpl.mesh);
    assert_eq!(loaded.hull_pixel_count(), tmpl.hull_pixel_count());
    // PGM quantizes to 8 bits; the reloaded template must agree to 0.5 gray.
    let max_diff = tmpl
        .template
        .pixels()
        .iter()
        .zip(loaded.template.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff <= 0.5 + 1e-9, "max template diff {max_diff}");
    std::fs::remove_dir_all(&dir).ok();
}
