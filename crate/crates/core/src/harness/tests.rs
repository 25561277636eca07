use nalgebra::DVector;

use super::*;

#[test]
fn synth_is_deterministic_and_shares_identity_latents() {
    let spec = SyntheticSpec {
        d: 6,
        k: 2,
        l: 1,
        identities: 4,
        j_min: 2,
        j_max: 3,
        noise_scale: 0.1,
        seed: 11,
    };
    let a = synth_generate(&spec).unwrap();
    let b = synth_generate(&spec).unwrap();
    for (ga, gb) in a.groups.iter().zip(&b.groups) {
        assert_eq!(ga.identity_id, gb.identity_id);
        assert_eq!(ga.observations, gb.observations);
    }
    // One w per identity by construction; every row of the group used it.
    assert_eq!(a.w.len(), a.groups.len());
    for (g, vs) in a.groups.iter().zip(&a.v) {
        assert_eq!(g.len(), vs.len());
    }
}

#[test]
fn dataset_csv_round_trips() {
    let spec = SyntheticSpec {
        d: 3,
        k: 1,
        l: 1,
        identities: 3,
        j_min: 1,
        j_max: 2,
        noise_scale: 0.2,
        seed: 5,
    };
    let data = synth_generate(&spec).unwrap();
    let dir = std::env::temp_dir().join(format!("idexp-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("data.csv");
    write_dataset_csv(&data.groups, &path).unwrap();
    let loaded = read_dataset_csv(&path).unwrap();
    assert_eq!(loaded.len(), data.groups.len());
    for (a, b) in loaded.iter().zip(&data.groups) {
        assert_eq!(a.identity_id, b.identity_id);
        assert_eq!(a.observations, b.observations);
    }
    // Same seed, same bytes.
    let path2 = dir.join("data2.csv");
    write_dataset_csv(&synth_generate(&spec).unwrap().groups, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn auc_perfect_separation_and_paper_formula() {
    // Perfectly separated scores.
    let scores = [0.9, 0.8, 0.1, 0.2];
    let labels = [true, true, false, false];
    let (auc, se) = auc_with_se(&scores, &labels).unwrap();
    assert_eq!(auc, 1.0);
    assert_eq!(se, 0.0);

    // A = 0.9 with N_p = 10, N_n = 100: nine positives above every
    // negative, one below -> SE = sqrt(0.9 * 0.1 / 10).
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..9 {
        scores.push(10.0 + i as f64);
        labels.push(true);
    }
    for i in 0..100 {
        scores.push(1.0 + i as f64 * 0.01);
        labels.push(false);
    }
    scores.push(0.0);
    labels.push(true);
    let (auc, se) = auc_with_se(&scores, &labels).unwrap();
    assert!((auc - 0.9).abs() < 1e-12);
    assert!((se - 0.094868).abs() < 1e-6, "SE {se}");
}

#[test]
fn auc_requires_both_classes() {
    assert!(auc_with_se(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn cumulative_curve_hand_case_and_monotonicity() {
    let curve = cumulative_error_curve(&[1.0, 2.0, 3.0], 10.0).unwrap();
    let expected = [(0.1, 1.0 / 3.0), (0.2, 2.0 / 3.0), (0.3, 1.0)];
    assert_eq!(curve.points.len(), 3);
    for ((t, f), (et, ef)) in curve.points.iter().zip(expected) {
        assert!((t - et).abs() < 1e-12);
        assert!((f - ef).abs() < 1e-12);
    }
    for w in curve.points.windows(2) {
        assert!(w[1].0 > w[0].0);
        assert!(w[1].1 >= w[0].1);
    }

    // All-zero errors collapse to a single point with fraction 1.
    let zeros = cumulative_error_curve(&[0.0, 0.0], 1.0).unwrap();
    assert_eq!(zeros.points, vec![(0.0, 1.0)]);
    assert_eq!(zeros.fraction_at(0.0), 1.0);

    assert!(cumulative_error_curve(&[1.0], 0.0).is_err());
}

#[test]
fn confusion_matrix_percent_rows() {
    let truth: Vec<String> = ["a", "a", "a", "b"].iter().map(|s| s.to_string()).collect();
    let perfect = confusion_matrix(&truth, &truth).unwrap();
    assert_eq!(perfect.percent[(0, 0)], 100.0);
    assert_eq!(perfect.percent[(1, 1)], 100.0);
    assert_eq!(perfect.accuracy(), 1.0);

    // One of four `a`s... there are three: one misassignment moves 1/3.
    let pred: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
    let cm = confusion_matrix(&truth, &pred).unwrap();
    assert!((cm.percent[(0, 0)] - 200.0 / 3.0).abs() < 1e-12);
    assert!((cm.percent[(0, 1)] - 100.0 / 3.0).abs() < 1e-12);
    for r in 0..cm.classes.len() {
        let sum: f64 = (0..cm.classes.len()).map(|c| cm.percent[(r, c)]).sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }
}

#[test]
fn confusion_matrix_flags_empty_rows() {
    let truth: Vec<String> = ["a", "a"].iter().map(|s| s.to_string()).collect();
    let pred: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let cm = confusion_matrix(&truth, &pred).unwrap();
    // Class b never appears as truth.
    let b_row = cm.classes.iter().position(|c| c == "b").unwrap();
    assert_eq!(cm.undefined_rows, vec![b_row]);
}

#[test]
fn ridge_recovers_noiseless_linear_map() {
    let xs: Vec<DVector<f64>> = (0..12)
        .map(|i| {
            DVector::from_vec(vec![i as f64, (i * i) as f64 % 7.0, (i as f64 * 0.9).sin()])
        })
        .collect();
    let w_true = nalgebra::DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 1.0, 0.25, -0.75]);
    let b_true = DVector::from_vec(vec![0.3, -0.6]);
    let ys: Vec<DVector<f64>> = xs.iter().map(|x| &w_true * x + &b_true).collect();
    let map = ridge_regress(&xs, &ys, 0.0).unwrap();
    assert!((map.weights.clone() - w_true).norm() < 1e-9);
    assert!((map.intercept.clone() - b_true).norm() < 1e-9);
}

#[test]
fn huge_ridge_shrinks_weights_to_zero() {
    let xs: Vec<DVector<f64>> =
        (0..8).map(|i| DVector::from_vec(vec![i as f64, -(i as f64)])).collect();
    let ys: Vec<DVector<f64>> = xs.iter().map(|x| x.clone()).collect();
    let map = ridge_regress(&xs, &ys, 1e12).unwrap();
    assert!(map.weights.norm() < 1e-6);
}

#[test]
fn classifier_separates_separable_data() {
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..10 {
        xs.push(DVector::from_vec(vec![1.0 + 0.1 * i as f64, 0.5]));
        labels.push("pos".to_string());
        xs.push(DVector::from_vec(vec![-1.0 - 0.1 * i as f64, -0.5]));
        labels.push("neg".to_string());
    }
    let clf = linear_classify(&xs, &labels, &ClassifyConfig::default()).unwrap();
    let correct = xs
        .iter()
        .zip(&labels)
        .filter(|(x, l)| clf.predict(x) == l.as_str())
        .count();
    assert_eq!(correct, xs.len(), "training accuracy must be 100%");
}

#[test]
fn label_permutation_permutes_predictions() {
    let xs: Vec<DVector<f64>> = (0..12)
        .map(|i| DVector::from_vec(vec![(i % 3) as f64, ((i * 2) % 5) as f64]))
        .collect();
    let labels: Vec<String> = (0..12).map(|i| format!("c{}", i % 3)).collect();
    let swapped: Vec<String> = labels
        .iter()
        .map(|l| match l.as_str() {
            "c0" => "c1".to_string(),
            "c1" => "c0".to_string(),
            other => other.to_string(),
        })
        .collect();
    let clf_a = linear_classify(&xs, &labels, &ClassifyConfig::default()).unwrap();
    let clf_b = linear_classify(&xs, &swapped, &ClassifyConfig::default()).unwrap();
    for x in &xs {
        let a = clf_a.predict(x);
        let b = clf_b.predict(x);
        let expected = match a {
            "c0" => "c1",
            "c1" => "c0",
            other => other,
        };
        assert_eq!(b, expected);
    }
}

#[test]
fn classifier_rejects_single_class() {
    let xs = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])];
    let labels = vec!["only".to_string(), "only".to_string()];
    assert!(linear_classify(&xs, &labels, &ClassifyConfig::default()).is_err());
}

#[test]
fn report_aggregates_are_recomputable() {
    let r = EvalReport::new("m", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((r.mean() - 2.5).abs() < 1e-12);
    let sd = (((1.5f64 * 1.5 + 0.5 * 0.5) * 2.0) / 3.0).sqrt();
    assert!((r.standard_error() - sd / 2.0).abs() < 1e-12);
}

#[test]
fn manifest_validation_enumerates_problems() {
    let manifest = Manifest {
        seed: 1,
        data: super::experiment::DataSource::Synth {
            d: 0,
            k: 1,
            l: 0,
            identities: 1,
            j_min: 0,
            j_max: 0,
            noise_scale: 0.1,
        },
        model: super::experiment::ModelSpec { k: 1, l: 0, max_iters: 10, tol: 1e-6 },
        target: super::experiment::TargetSpec::Bones { count: 0, noise: 0.1 },
        variants: vec![super::experiment::Variant { name: "x".into(), features: "bogus".into() }],
        metrics: vec!["accuracy".into()],
        output_dir: "report".into(),
    };
    let err = manifest.validate().unwrap_err().to_string();
    for needle in ["features", "bones.count", "identities", "j_min", "model.l", "accuracy"] {
        assert!(err.contains(needle), "missing {needle} in: {err}");
    }
}
