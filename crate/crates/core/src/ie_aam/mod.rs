//! Inverse-compositional appearance-model fitting with two interchangeable
//! point-distribution backends.
//!
//! The PCA backend drives a classic eigen-shape warp. The identity-
//! expression backend replaces it with `s = s0 + F w + G v_j`, shares one
//! `w` across a batch of same-identity images, pools their residuals for
//! the `w` update, and re-projects composed vertices through the stacked
//! posterior instead of an orthonormal basis inverse.

mod fit;
mod io;
mod template;

pub use fit::{
    compose_and_project, estimate_texture, fit, ic_update_ie, ic_update_pca, AamFitResult,
    FitConfig, FitDiagnostics,
};
pub use template::{build_template, AamTemplate, LabeledImage, TrainConfig};

use nalgebra::DVector;

use crate::factor_model::{EmConfig, FactorModel};
use crate::shape::TriangleMesh;
use crate::Shape;

/// Which point-distribution model backs the warp.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Eigen-shapes: `components` columns plus (optionally) the 4-column
    /// similarity block, pose-first orthonormalized.
    Pca { components: usize },
    /// Identity-expression factorization trained on the aligned shapes;
    /// pose columns are appended to the expression loading.
    Ie { k: usize, l: usize, em: EmConfig },
}

/// Trained backend state stored in a template.
#[derive(Debug, Clone)]
pub enum BackendModel {
    Pca {
        /// 2n x q orthonormal basis (pose block first when enabled).
        basis: nalgebra::DMatrix<f64>,
    },
    Ie {
        /// Factor model over shape residuals from the base shape; its
        /// expression loading already carries the pose columns.
        model: FactorModel,
    },
}

impl BackendModel {
    pub fn is_ie(&self) -> bool {
        matches!(self, BackendModel::Ie { .. })
    }
}

/// Current warp parameters during fitting.
#[derive(Debug, Clone)]
pub enum WarpParams {
    Pca {
        /// One coefficient vector per image.
        p: Vec<DVector<f64>>,
    },
    Ie {
        /// Single identity vector shared by the whole batch.
        w: DVector<f64>,
        /// Per-image expression (and pose) vectors.
        v: Vec<DVector<f64>>,
    },
}

impl WarpParams {
    pub fn batch_len(&self) -> usize {
        match self {
            WarpParams::Pca { p } => p.len(),
            WarpParams::Ie { v, .. } => v.len(),
        }
    }
}

/// Parameter increments produced by one inverse-compositional update.
#[derive(Debug, Clone)]
pub enum ParamDelta {
    Pca { dp: Vec<DVector<f64>> },
    Ie { dw: DVector<f64>, dv: Vec<DVector<f64>> },
}

impl ParamDelta {
    /// Infinity norm over every parameter entry.
    pub fn max_abs(&self) -> f64 {
        let fold = |acc: f64, v: &DVector<f64>| v.iter().fold(acc, |a, &x| a.max(x.abs()));
        match self {
            ParamDelta::Pca { dp } => dp.iter().fold(0.0, fold),
            ParamDelta::Ie { dw, dv } => dv.iter().fold(fold(0.0, dw), fold),
        }
    }

    pub fn scaled(&self, factor: f64) -> ParamDelta {
        match self {
            ParamDelta::Pca { dp } => ParamDelta::Pca { dp: dp.iter().map(|v| v * factor).collect() },
            ParamDelta::Ie { dw, dv } => ParamDelta::Ie {
                dw: dw * factor,
                dv: dv.iter().map(|v| v * factor).collect(),
            },
        }
    }
}

/// Reconstructs per-image vertices from parameters: `s0 + basis * p` or
/// `s0 + F w + G v_j`.
pub(crate) fn synthesize_shape(
    base: &Shape,
    backend: &BackendModel,
    params: &WarpParams,
    j: usize,
) -> Shape {
    let s0 = base.to_vector();
    let v = match (backend, params) {
        (BackendModel::Pca { basis }, WarpParams::Pca { p }) => s0 + basis * &p[j],
        (BackendModel::Ie { model }, WarpParams::Ie { w, v }) => {
            s0 + model.f() * w + model.g() * &v[j]
        }
        _ => unreachable!("backend/params kind mismatch"),
    };
    Shape::from_vector(&v).expect("synthesized shape is finite")
}

pub(crate) fn mesh_orientations(shape: &Shape, mesh: &TriangleMesh) -> Vec<f64> {
    mesh.triangles
        .iter()
        .map(|t| {
            let a = shape.point(t[0]);
            let b = shape.point(t[1]);
            let c = shape.point(t[2]);
            (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
        })
        .collect()
}

#[cfg(test)]
mod tests;
