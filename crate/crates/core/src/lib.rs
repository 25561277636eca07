//! Identity-expression factor analysis and its structured extensions.
//!
//! The crate trains a linear-Gaussian model that splits observation
//! variance into an identity factor shared across all samples of a subject
//! and a per-sample expression factor, and builds on it in three layers:
//!
//! * [`factor_model`] — EM training, posterior inference, identity
//!   normalization and expression-feature extraction.
//! * [`ie_aam`] — inverse-compositional appearance-model fitting with a PCA
//!   or identity-expression point-distribution backend.
//! * [`clm`] — constrained local models: response maps, PPCA and
//!   identity-expression spatial energies, ICM search.
//!
//! Supporting layers: [`ppca`], [`shape`] (alignment, triangulation,
//! warping), [`image`] (grayscale buffers + PGM), and [`harness`]
//! (synthetic data, predictors, metrics, experiment orchestration).

pub mod clm;
pub mod error;
pub mod factor_model;
pub mod harness;
pub mod ie_aam;
pub mod image;
pub mod ppca;
pub mod shape;

pub use error::{Error, Result};
pub use factor_model::{fit_em, EmConfig, FactorModel, IdentityGroup, PosteriorMoments};
pub use image::GrayImage;
pub use shape::{Shape, SimilarityTransform, TriangleMesh};
