use nalgebra::{DMatrix, DVector};

use super::*;

fn model_1d() -> FactorModel {
    // d=1, K=1, L=1, mu=0, F=G=1, lambda=rho=sigma=1
    FactorModel::new(
        DVector::from_vec(vec![0.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0]),
    )
    .unwrap()
}

#[test]
fn stacked_system_block_layout() {
    // F = [1, 0]^T, G = [0, 1]^T, J = 2
    let model = FactorModel::new(
        DVector::from_vec(vec![0.0, 0.0]),
        DMatrix::from_vec(2, 1, vec![1.0, 0.0]),
        DMatrix::from_vec(2, 1, vec![0.0, 1.0]),
        DVector::from_vec(vec![1.0, 1.0]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let sys = model.stacked_system(2).unwrap();
    let expected = DMatrix::from_row_slice(
        4,
        3,
        &[
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0,
        ],
    );
    assert_eq!(sys.a, expected);
    assert_eq!(sys.phi.as_slice(), &[1.0, 1.0, 1.0]);
    assert_eq!(sys.psi.len(), 4);
    assert_eq!(sys.m.len(), 4);
}

#[test]
fn stacked_system_single_image_is_f_beside_g() {
    let model = model_1d();
    let sys = model.stacked_system(1).unwrap();
    assert_eq!(sys.a, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
}

#[test]
fn stacked_system_no_identity_column() {
    let model = FactorModel::new(
        DVector::from_vec(vec![0.0]),
        DMatrix::zeros(1, 0),
        DMatrix::from_vec(1, 1, vec![2.0]),
        DVector::from_vec(vec![1.0]),
        DVector::zeros(0),
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let sys = model.stacked_system(3).unwrap();
    let expected = DMatrix::from_row_slice(
        3,
        3,
        &[
            2.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, //
            0.0, 0.0, 2.0,
        ],
    );
    assert_eq!(sys.a, expected);
}

#[test]
fn stacked_system_rejects_zero_groups() {
    assert!(model_1d().stacked_system(0).is_err());
}

#[test]
fn e_step_closed_form_2x2() {
    let model = model_1d();
    let group = IdentityGroup::new("a", vec![DVector::from_vec(vec![3.0])]).unwrap();
    let post = model.e_step(&group).unwrap();
    // precision [[2,1],[1,2]], rhs (3,3) -> mean (1,1)
    assert!((post.mean[0] - 1.0).abs() < 1e-12);
    assert!((post.mean[1] - 1.0).abs() < 1e-12);
    let expected_cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])
        .try_inverse()
        .unwrap();
    assert!((post.covariance.clone() - expected_cov).norm() < 1e-12);
    let sm = &post.covariance + &post.mean * post.mean.transpose();
    assert!((post.second_moment.clone() - sm).norm() < 1e-15);
}

#[test]
fn e_step_prior_dominates_under_huge_noise() {
    let model = FactorModel::new(
        DVector::from_vec(vec![0.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DMatrix::from_vec(1, 1, vec![1.0]),
        DVector::from_vec(vec![1e9]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let group = IdentityGroup::new("a", vec![DVector::from_vec(vec![3.0])]).unwrap();
    let post = model.e_step(&group).unwrap();
    assert!(post.mean.norm() < 1e-6);
}

#[test]
fn e_step_rejects_dimension_mismatch_and_nonfinite() {
    let model = model_1d();
    let bad = IdentityGroup::new("a", vec![DVector::from_vec(vec![1.0, 2.0])]).unwrap();
    assert!(model.e_step(&bad).is_err());
    assert!(IdentityGroup::new("a", vec![DVector::from_vec(vec![f64::NAN])]).is_err());
}

#[test]
fn infer_equals_single_image_e_step_exactly() {
    let model = FactorModel::new(
        DVector::from_vec(vec![0.5, -1.0, 2.0]),
        DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 0.8, 0.1, -0.4, 0.9]),
        DMatrix::from_row_slice(3, 1, &[1.1, -0.7, 0.2]),
        DVector::from_vec(vec![0.5, 0.8, 1.2]),
        DVector::from_vec(vec![2.0, 0.7]),
        DVector::from_vec(vec![1.3]),
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.2, -0.3]);
    let via_infer = model.infer(&x).unwrap();
    let via_e_step = model
        .e_step(&IdentityGroup::new("a", vec![x.clone()]).unwrap())
        .unwrap();
    assert_eq!(via_infer.mean, via_e_step.mean);
    assert_eq!(via_infer.covariance, via_e_step.covariance);
}

#[test]
fn infer_centered_observation_has_zero_mean() {
    let model = model_1d();
    let post = model.infer(&DVector::from_vec(vec![0.0])).unwrap();
    assert_eq!(post.mean.norm(), 0.0);
}

#[test]
fn expression_features_zero_at_mean() {
    let model = model_1d();
    let v = model.expression_features(&DVector::from_vec(vec![0.0])).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0], 0.0);
}

#[test]
fn identity_normalize_fixes_mean() {
    let model = model_1d();
    let out = model.identity_normalize(&DVector::from_vec(vec![0.0])).unwrap();
    assert_eq!(out, DVector::from_vec(vec![0.0]));
}

#[test]
fn accumulate_single_image_borders_stacked_moment() {
    let model = model_1d();
    let group = IdentityGroup::new("a", vec![DVector::from_vec(vec![3.0])]).unwrap();
    let post = model.e_step(&group).unwrap();
    let mut stats = SufficientStats::new(1, 1, 1);
    stats.accumulate(&post, &group).unwrap();
    let sm = &post.second_moment;
    let ddt = stats.sum_ddt();
    assert_eq!(ddt[(0, 0)], sm[(0, 0)]);
    assert_eq!(ddt[(0, 1)], sm[(0, 1)]);
    assert_eq!(ddt[(1, 1)], sm[(1, 1)]);
    assert_eq!(ddt[(0, 2)], post.mean[0]);
    assert_eq!(ddt[(1, 2)], post.mean[1]);
    assert_eq!(ddt[(2, 2)], 1.0);
    assert_eq!(stats.n(), 1);
}

#[test]
fn accumulate_identity_covariance_zero_mean() {
    // Stacked covariance I, mean 0 -> every E[d~ d~^T] = blockdiag(I_{K+L}, 1)
    let (k, l, j) = (1, 1, 2);
    let q = k + j * l;
    let moments = PosteriorMoments {
        mean: DVector::zeros(q),
        covariance: DMatrix::identity(q, q),
        second_moment: DMatrix::identity(q, q),
        k,
        l,
        j,
    };
    let group = IdentityGroup::new(
        "a",
        vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.0])],
    )
    .unwrap();
    let mut stats = SufficientStats::new(1, k, l);
    stats.accumulate(&moments, &group).unwrap();
    let expected = DMatrix::from_row_slice(
        3,
        3,
        &[
            2.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, //
            0.0, 0.0, 2.0,
        ],
    );
    assert_eq!(stats.sum_ddt(), &expected);
}

#[test]
fn m_step_identity_normal_matrix() {
    // One pair: x=[2], E[d~]=(1,1,1), E[d~ d~^T]=I -> B~ = [2,2,2]
    let mut stats = SufficientStats::new(1, 1, 1);
    stats.sum_x_dt = DMatrix::from_row_slice(1, 3, &[2.0, 2.0, 2.0]);
    stats.sum_ddt = DMatrix::identity(3, 3);
    stats.sum_xx = DVector::from_vec(vec![4.0]);
    stats.n = 1;
    let model = stats.m_step(1e-6).unwrap();
    assert!((model.f()[(0, 0)] - 2.0).abs() < 1e-7);
    assert!((model.g()[(0, 0)] - 2.0).abs() < 1e-7);
    assert!((model.mu()[0] - 2.0).abs() < 1e-7);
}

#[test]
fn m_step_sigma_is_mean_square_when_loading_zero() {
    // sum_x_dt = 0 forces B~ = 0; Sigma becomes the mean of x x^T diagonals.
    let mut stats = SufficientStats::new(2, 1, 1);
    stats.sum_x_dt = DMatrix::zeros(2, 3);
    stats.sum_ddt = DMatrix::identity(3, 3) * 2.0;
    stats.sum_xx = DVector::from_vec(vec![8.0, 2.0]);
    stats.n = 2;
    let model = stats.m_step(1e-6).unwrap();
    assert!((model.sigma()[0] - 4.0).abs() < 1e-9);
    assert!((model.sigma()[1] - 1.0).abs() < 1e-9);
}

#[test]
fn m_step_needs_data() {
    let stats = SufficientStats::new(1, 1, 1);
    assert!(stats.m_step(1e-6).is_err());
}

#[test]
fn likelihood_additivity_under_group_duplication() {
    let model = model_1d();
    let group = IdentityGroup::new("a", vec![DVector::from_vec(vec![0.7])]).unwrap();
    let one = model.marginal_log_likelihood(std::slice::from_ref(&group)).unwrap();
    let two = model
        .marginal_log_likelihood(&[group.clone(), group.clone()])
        .unwrap();
    assert!((two - 2.0 * one).abs() < 1e-12);
}

#[test]
fn likelihood_no_latents_is_diagonal_gaussian() {
    // K = L = 0: log-likelihood reduces to sum of log N(x; mu, Sigma).
    let model = FactorModel::new(
        DVector::from_vec(vec![1.0, -2.0]),
        DMatrix::zeros(2, 0),
        DMatrix::zeros(2, 0),
        DVector::from_vec(vec![0.5, 2.0]),
        DVector::zeros(0),
        DVector::zeros(0),
    )
    .unwrap();
    let xs = [
        DVector::from_vec(vec![1.5, -1.0]),
        DVector::from_vec(vec![0.2, -2.5]),
    ];
    let group = IdentityGroup::new("a", xs.to_vec()).unwrap();
    let got = model.marginal_log_likelihood(&[group]).unwrap();
    let mut want = 0.0;
    for x in &xs {
        for i in 0..2 {
            let var: f64 = model.sigma()[i];
            let r: f64 = x[i] - model.mu()[i];
            want += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var);
        }
    }
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn model_validation_rejects_bad_variances_and_shapes() {
    let mu = DVector::from_vec(vec![0.0]);
    let f = DMatrix::from_vec(1, 1, vec![1.0]);
    let g = DMatrix::from_vec(1, 1, vec![1.0]);
    let ok = DVector::from_vec(vec![1.0]);
    let neg = DVector::from_vec(vec![-1.0]);
    assert!(FactorModel::new(mu.clone(), f.clone(), g.clone(), neg, ok.clone(), ok.clone()).is_err());
    assert!(FactorModel::new(
        mu.clone(),
        f.clone(),
        g.clone(),
        ok.clone(),
        DVector::from_vec(vec![1.0, 1.0]),
        ok.clone()
    )
    .is_err());
    assert!(FactorModel::new(
        DVector::zeros(0),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 0),
        DVector::zeros(0),
        DVector::zeros(0),
        DVector::zeros(0)
    )
    .is_err());
}

#[test]
fn stats_merge_matches_sequential_accumulation() {
    let model = model_1d();
    let g1 = IdentityGroup::new("a", vec![DVector::from_vec(vec![1.0])]).unwrap();
    let g2 = IdentityGroup::new(
        "b",
        vec![DVector::from_vec(vec![-2.0]), DVector::from_vec(vec![0.5])],
    )
    .unwrap();

    let mut seq = SufficientStats::new(1, 1, 1);
    seq.accumulate(&model.e_step(&g1).unwrap(), &g1).unwrap();
    seq.accumulate(&model.e_step(&g2).unwrap(), &g2).unwrap();

    let mut left = SufficientStats::new(1, 1, 1);
    left.accumulate(&model.e_step(&g1).unwrap(), &g1).unwrap();
    let mut right = SufficientStats::new(1, 1, 1);
    right.accumulate(&model.e_step(&g2).unwrap(), &g2).unwrap();
    left.merge(&right).unwrap();

    assert!((seq.sum_ddt() - left.sum_ddt()).norm() < 1e-12);
    assert!((seq.sum_x_dt() - left.sum_x_dt()).norm() < 1e-12);
    assert_eq!(seq.n(), left.n());
}

#[test]
fn save_load_round_trip_is_bit_faithful() {
    let dir = std::env::temp_dir().join(format!("idexp-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    let model = FactorModel::new(
        DVector::from_vec(vec![0.1, -0.2]),
        DMatrix::from_row_slice(2, 1, &[std::f64::consts::PI, -1.5e-7]),
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        DVector::from_vec(vec![0.3, 0.4]),
        DVector::from_vec(vec![1.5]),
        DVector::from_vec(vec![0.9, 1.1]),
    )
    .unwrap();
    model.save(&path).unwrap();
    let loaded = FactorModel::load(&path).unwrap();
    assert_eq!(&model, &loaded);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn load_rejects_negative_variance_and_missing_field() {
    let dir = std::env::temp_dir().join(format!("idexp-badmodel-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    let bad_var = dir.join("neg.json");
    std::fs::write(
        &bad_var,
        r#"{"version":1,"d":1,"K":0,"L":1,"mu":[0.0],"F":[[]],"G":[[1.0]],"sigma":[-1.0],"lambda":[],"rho":[1.0]}"#,
    )
    .unwrap();
    let err = FactorModel::load(&bad_var).unwrap_err();
    assert!(err.to_string().contains("variance"), "got: {err}");

    let missing = dir.join("missing.json");
    std::fs::write(
        &missing,
        r#"{"version":1,"d":1,"K":0,"L":1,"mu":[0.0],"F":[[]],"G":[[1.0]],"lambda":[],"rho":[1.0]}"#,
    )
    .unwrap();
    let err = FactorModel::load(&missing).unwrap_err();
    assert!(
        err.to_string().contains("sigma"),
        "schema error should name the field, got: {err}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn load_rejects_wrong_version() {
    let dir = std::env::temp_dir().join(format!("idexp-ver-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("v9.json");
    std::fs::write(
        &path,
        r#"{"version":9,"d":1,"K":0,"L":1,"mu":[0.0],"F":[[]],"G":[[1.0]],"sigma":[1.0],"lambda":[],"rho":[1.0]}"#,
    )
    .unwrap();
    assert!(FactorModel::load(&path).is_err());
    std::fs::remove_dir_all(&dir).ok();
}
