//! Manifest-driven experiments: leave-one-identity-out pipelines from data
//! generation through fitting, prediction and report emission.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{auc_with_se, confusion_matrix, cumulative_error_curve};
use super::predict::{linear_classify, ridge_regress, ClassifyConfig};
use super::report::{write_curve_csv, write_curve_svg, write_metric_csv, EvalReport};
use super::synth::{read_dataset_csv, standard_normal_vector, synth_generate, SyntheticSpec};
use crate::error::{Error, Result};
use crate::factor_model::{fit_em, EmConfig, IdentityGroup};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelSpec,
    pub target: TargetSpec,
    pub variants: Vec<Variant>,
    pub metrics: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "report".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth {
        d: usize,
        k: usize,
        l: usize,
        identities: usize,
        j_min: usize,
        j_max: usize,
        noise_scale: f64,
    },
    Csv {
        path: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    pub l: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-6
}

/// What the downstream predictor learns. Bone positions are simulated as
/// clipped linear functions of the true expression latents; class labels
/// as the argmax of a noisy linear score of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSpec {
    Bones { count: usize, noise: f64 },
    Classes { count: usize, noise: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    /// `raw`, `expression` or `normalized`.
    pub features: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: serde_json::Value,
    pub summary_path: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(File::open(path.as_ref())?))?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Collects every schema violation rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.variants.is_empty() {
            problems.push("variants: need at least one".to_string());
        }
        for v in &self.variants {
            if !matches!(v.features.as_str(), "raw" | "expression" | "normalized") {
                problems.push(format!(
                    "variant {:?}: features must be raw|expression|normalized, got {:?}",
                    v.name, v.features
                ));
            }
        }
        if self.metrics.is_empty() {
            problems.push("metrics: need at least one".to_string());
        }
        let (bones_target, allowed): (bool, &[&str]) = match &self.target {
            TargetSpec::Bones { count, .. } => {
                if *count == 0 {
                    problems.push("target.bones.count: must be >= 1".into());
                }
                (true, &["mse", "curve"])
            }
            TargetSpec::Classes { count, .. } => {
                if *count < 2 {
                    problems.push("target.classes.count: must be >= 2".into());
                }
                (false, &["accuracy", "confusion", "auc"])
            }
        };
        for m in &self.metrics {
            if !allowed.contains(&m.as_str()) {
                problems.push(format!(
                    "metric {m:?} is not valid for the {} target (allowed: {allowed:?})",
                    if bones_target { "bones" } else { "classes" }
                ));
            }
        }
        if let DataSource::Synth { d, l, identities, j_min, j_max, .. } = &self.data {
            if *identities < 3 {
                problems.push("data.synth.identities: need >= 3 for leave-one-out".into());
            }
            if *l == 0 || *d == 0 {
                problems.push("data.synth: d and l must be >= 1".into());
            }
            if *j_min == 0 || j_max < j_min {
                problems.push("data.synth: need 1 <= j_min <= j_max".into());
            }
        }
        if matches!(self.data, DataSource::Csv { .. }) {
            problems.push(
                "data.csv: simulated targets need synthetic data (latent truth unavailable)"
                    .into(),
            );
        }
        if self.model.l == 0 {
            problems.push("model.l: must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::schema(format!("manifest violations: {}", problems.join("; "))))
        }
    }
}

fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

struct Targets {
    /// Per group, per observation: regression target or class label index.
    bones: Option<Vec<Vec<DVector<f64>>>>,
    labels: Option<Vec<Vec<String>>>,
}

fn simulate_targets(
    spec: &TargetSpec,
    true_v: &[Vec<DVector<f64>>],
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Targets {
    match spec {
        TargetSpec::Bones { count, noise } => {
            let map = DMatrix::from_fn(*count, l, |_, _| {
                use rand::Rng;
                rng.gen_range(-1.0..1.0)
            });
            let bones = true_v
                .iter()
                .map(|vs| {
                    vs.iter()
                        .map(|v| {
                            let eps = standard_normal_vector(rng, *count) * *noise;
                            (&map * v * 0.5 + eps).map(|t| t.clamp(-1.0, 1.0))
                        })
                        .collect()
                })
                .collect();
            Targets { bones: Some(bones), labels: None }
        }
        TargetSpec::Classes { count, noise } => {
            let map = DMatrix::from_fn(*count, l, |_, _| {
                use rand::Rng;
                rng.gen_range(-1.0..1.0)
            });
            let labels = true_v
                .iter()
                .map(|vs| {
                    vs.iter()
                        .map(|v| {
                            let eps = standard_normal_vector(rng, *count) * *noise;
                            let scores = &map * v + eps;
                            let mut best = 0;
                            for i in 1..scores.len() {
                                if scores[i] > scores[best] {
                                    best = i;
                                }
                            }
                            format!("c{best}")
                        })
                        .collect()
                })
                .collect();
            Targets { bones: None, labels: Some(labels) }
        }
    }
}

/// Feature extraction for one variant given a model fitted on the training
/// fold only.
fn variant_features(
    variant: &Variant,
    train: &[IdentityGroup],
    manifest: &Manifest,
    seed: u64,
) -> Result<Box<dyn Fn(&DVector<f64>) -> Result<DVector<f64>>>> {
    match variant.features.as_str() {
        "raw" => Ok(Box::new(|x: &DVector<f64>| Ok(x.clone()))),
        "expression" => {
            let em = EmConfig {
                max_iters: manifest.model.max_iters,
                rel_tolerance: manifest.model.tol,
                seed,
                ..EmConfig::default()
            };
            let fit = fit_em(train, manifest.model.k, manifest.model.l, &em)?;
            let model = fit.model;
            Ok(Box::new(move |x| model.expression_features(x)))
        }
        "normalized" => {
            let em = EmConfig {
                max_iters: manifest.model.max_iters,
                rel_tolerance: manifest.model.tol,
                seed,
                ..EmConfig::default()
            };
            let fit = fit_em(train, manifest.model.k, manifest.model.l, &em)?;
            let model = fit.model;
            Ok(Box::new(move |x| model.identity_normalize(x)))
        }
        other => Err(Error::invalid(format!("unknown feature mode {other:?}"))),
    }
}

/// Executes the manifest: synthesize data, run leave-one-identity-out
/// trials per variant, and write metric CSVs, curve SVGs and
/// `summary.json` under `base_dir/<output_dir>`. Fully deterministic for a
/// fixed manifest.
pub fn run_experiment(manifest: &Manifest, base_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    manifest.validate()?;
    let out_dir = base_dir.as_ref().join(&manifest.output_dir);
    fs::create_dir_all(&out_dir)?;

    let DataSource::Synth { d, k, l, identities, j_min, j_max, noise_scale } = manifest.data else {
        return Err(Error::schema("csv data source is rejected by validation"));
    };
    let data = synth_generate(&SyntheticSpec {
        d,
        k,
        l,
        identities,
        j_min,
        j_max,
        noise_scale,
        seed: manifest.seed,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed.wrapping_add(0x7a67e75));
    let targets = simulate_targets(&manifest.target, &data.v, l, &mut rng);

    let mut files = Vec::new();
    let mut variant_summaries = Vec::new();

    for (vi, variant) in manifest.variants.iter().enumerate() {
        let mut mse_trials = Vec::new();
        let mut acc_trials = Vec::new();
        let mut pooled_truth: Vec<String> = Vec::new();
        let mut pooled_pred: Vec<String> = Vec::new();
        let mut pooled_scores: Vec<(String, Vec<f64>, Vec<String>)> = Vec::new();
        let mut pooled_abs_errors: Vec<f64> = Vec::new();

        for held_out in 0..data.groups.len() {
            let test = &data.groups[held_out];
            let train: Vec<IdentityGroup> = data
                .groups
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held_out)
                .map(|(_, g)| g.clone())
                .collect();
            // Lineage check: the held-out identity must not reach fitting.
            if train.iter().any(|g| g.identity_id == test.identity_id) {
                return Err(Error::invalid(format!(
                    "leave-one-out leakage: {} present in training fold",
                    test.identity_id
                )));
            }

            let trial_seed = manifest
                .seed
                .wrapping_add((vi as u64) << 32)
                .wrapping_add(held_out as u64);
            let featurize = variant_features(variant, &train, manifest, trial_seed)?;

            let mut train_x = Vec::new();
            for g in &train {
                for x in &g.observations {
                    train_x.push(featurize(x)?);
                }
            }
            let test_x: Vec<DVector<f64>> =
                test.observations.iter().map(|x| featurize(x)).collect::<Result<_>>()?;

            match &manifest.target {
                TargetSpec::Bones { .. } => {
                    let bones = targets.bones.as_ref().expect("bones targets");
                    let mut train_y = Vec::new();
                    for (gi, g) in data.groups.iter().enumerate() {
                        if gi == held_out {
                            continue;
                        }
                        for t in &bones[gi] {
                            train_y.push(t.clone());
                        }
                        let _ = g;
                    }
                    let map = ridge_regress(&train_x, &train_y, 1e-6)?;
                    let mut se = 0.0;
                    let mut count = 0usize;
                    for (x, t) in test_x.iter().zip(&bones[held_out]) {
                        let pred = map.predict(x);
                        for i in 0..pred.len() {
                            let e = pred[i] - t[i];
                            se += e * e;
                            pooled_abs_errors.push(e.abs());
                            count += 1;
                        }
                    }
                    mse_trials.push(se / count.max(1) as f64);
                }
                TargetSpec::Classes { .. } => {
                    let labels = targets.labels.as_ref().expect("class targets");
                    let mut train_y = Vec::new();
                    for (gi, _) in data.groups.iter().enumerate() {
                        if gi == held_out {
                            continue;
                        }
                        train_y.extend(labels[gi].iter().cloned());
                    }
                    let clf = linear_classify(&train_x, &train_y, &ClassifyConfig::default())?;
                    let mut correct = 0usize;
                    for (x, truth) in test_x.iter().zip(&labels[held_out]) {
                        let pred = clf.predict(x).to_string();
                        if &pred == truth {
                            correct += 1;
                        }
                        pooled_scores.push((truth.clone(), clf.scores(x), clf.classes.clone()));
                        pooled_truth.push(truth.clone());
                        pooled_pred.push(pred);
                    }
                    acc_trials.push(correct as f64 / test_x.len().max(1) as f64);
                }
            }
        }

        let vslug = slug(&variant.name);
        let mut metric_values = serde_json::Map::new();
        for metric in &manifest.metrics {
            match metric.as_str() {
                "mse" => {
                    let report = EvalReport::new("mse", mse_trials.clone())?;
                    let path = out_dir.join(format!("mse_{vslug}.csv"));
                    write_metric_csv(&report, &path)?;
                    files.push(path);
                    metric_values.insert(
                        "mse".into(),
                        json!({"mean": report.mean(), "se": report.standard_error()}),
                    );
                }
                "accuracy" => {
                    let report = EvalReport::new("accuracy", acc_trials.clone())?;
                    let path = out_dir.join(format!("accuracy_{vslug}.csv"));
                    write_metric_csv(&report, &path)?;
                    files.push(path);
                    metric_values.insert(
                        "accuracy".into(),
                        json!({"mean": report.mean(), "se": report.standard_error()}),
                    );
                }
                "confusion" => {
                    let cm = confusion_matrix(&pooled_truth, &pooled_pred)?;
                    let path = out_dir.join(format!("confusion_{vslug}.csv"));
                    let mut out = BufWriter::new(File::create(&path)?);
                    {
                        use std::io::Write;
                        writeln!(out, "class,{}", cm.classes.join(","))?;
                        for (r, class) in cm.classes.iter().enumerate() {
                            let row: Vec<String> = (0..cm.classes.len())
                                .map(|c| cm.percent[(r, c)].to_string())
                                .collect();
                            writeln!(out, "{class},{}", row.join(","))?;
                        }
                    }
                    files.push(path);
                    metric_values.insert("confusion_accuracy".into(), json!(cm.accuracy()));
                }
                "auc" => {
                    let classes: Vec<String> = pooled_scores
                        .first()
                        .map(|(_, _, c)| c.clone())
                        .unwrap_or_default();
                    let path = out_dir.join(format!("auc_{vslug}.csv"));
                    let mut out = BufWriter::new(File::create(&path)?);
                    {
                        use std::io::Write;
                        writeln!(out, "class,auc,se")?;
                        let mut aucs = serde_json::Map::new();
                        for (ci, class) in classes.iter().enumerate() {
                            let scores: Vec<f64> =
                                pooled_scores.iter().map(|(_, s, _)| s[ci]).collect();
                            let labels: Vec<bool> =
                                pooled_scores.iter().map(|(t, _, _)| t == class).collect();
                            let (a, se) = auc_with_se(&scores, &labels)?;
                            writeln!(out, "{class},{a},{se}")?;
                            aucs.insert(class.clone(), json!({"auc": a, "se": se}));
                        }
                        metric_values.insert("auc".into(), serde_json::Value::Object(aucs));
                    }
                    files.push(path);
                }
                "curve" => {
                    let curve = cumulative_error_curve(&pooled_abs_errors, 1.0)?;
                    let csv_path = out_dir.join(format!("curve_{vslug}.csv"));
                    write_curve_csv(&curve, &csv_path)?;
                    let svg_path = out_dir.join(format!("curve_{vslug}.svg"));
                    write_curve_svg(&curve, &variant.name, &svg_path)?;
                    files.push(csv_path);
                    files.push(svg_path);
                }
                other => return Err(Error::schema(format!("unknown metric {other:?}"))),
            }
        }
        variant_summaries.push(json!({
            "name": variant.name,
            "features": variant.features,
            "trials": data.groups.len(),
            "metrics": serde_json::Value::Object(metric_values),
        }));
    }

    let summary = json!({
        "seed": manifest.seed,
        "identities": data.groups.len(),
        "variants": variant_summaries,
    });
    let summary_path = out_dir.join("summary.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&summary_path)?), &summary)?;
    Ok(ExperimentReport { summary, summary_path, files })
}
