//! Evaluation harness: synthetic data generation, dataset files, downstream
//! predictors, metrics and manifest-driven experiments.

mod experiment;
mod metrics;
mod predict;
mod report;
mod synth;

pub use experiment::{run_experiment, ExperimentReport, Manifest};
pub use metrics::{
    auc_with_se, confusion_matrix, cumulative_error_curve, face_size, inter_ocular_distance,
    ConfusionMatrix, CumulativeCurve,
};
pub use predict::{linear_classify, ridge_regress, ClassifyConfig, LinearMap, OneVsAllClassifier};
pub use report::{write_curve_csv, write_curve_svg, write_metric_csv, EvalReport};
pub use synth::{
    face_layout, face_texture, read_dataset_csv, render_face, sample_shapes, synth_generate,
    synthetic_shape_model, write_dataset_csv, SyntheticDataset, SyntheticSpec,
};

#[cfg(test)]
mod tests;
