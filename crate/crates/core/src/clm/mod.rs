//! Constrained local models: response maps from pluggable local detectors,
//! PPCA and identity-expression spatial energies, and ICM minimization.

mod detector;
mod energy;
mod icm;
mod localize;

pub use detector::{GridDetector, NccDetector};
pub use energy::{energy_ie, energy_ppca, PriorWeight};
pub use icm::{icm_minimize, IcmConfig, IcmOutcome};
pub use localize::{
    generate_response_maps, localize, localize_from_maps, LocalizeConfig, LocalizeOutcome,
    RegistrationMode, SpatialModel,
};

use nalgebra::{DMatrix, Vector2};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Grid of local-detector log-scores for one keypoint over candidate image
/// locations. `scores[(row, col)]` sits at `origin + stride * (col, row)`.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    pub keypoint: usize,
    pub origin: Vector2<f64>,
    pub stride: f64,
    pub scores: DMatrix<f64>,
    /// Set when the requested grid had to be clamped to the image bounds.
    pub clamped: bool,
}

impl ResponseMap {
    pub fn new(
        keypoint: usize,
        origin: Vector2<f64>,
        stride: f64,
        scores: DMatrix<f64>,
    ) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::invalid("response map grid must be nonempty"));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::invalid("response map stride must be positive"));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("response map scores"));
        }
        Ok(Self { keypoint, origin, stride, scores, clamped: false })
    }

    pub fn rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn cols(&self) -> usize {
        self.scores.ncols()
    }

    pub fn grid_to_image(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + self.stride * col as f64,
            self.origin.y + self.stride * row as f64,
        )
    }

    /// Row-major argmax; ties keep the earliest cell.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_score = f64::NEG_INFINITY;
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if self.scores[(r, c)] > best_score {
                    best_score = self.scores[(r, c)];
                    best = (r, c);
                }
            }
        }
        best
    }

    pub fn score_at(&self, cell: (usize, usize)) -> f64 {
        self.scores[cell]
    }
}

/// Landmark grid assignments for a batch of images: `assignments[image]
/// [keypoint] = (row, col)` into that keypoint's response map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateConfiguration {
    pub assignments: Vec<Vec<(usize, usize)>>,
}

impl CandidateConfiguration {
    pub fn images(&self) -> usize {
        self.assignments.len()
    }

    pub fn keypoints(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, maps: &[Vec<ResponseMap>]) -> Result<()> {
        if self.assignments.is_empty() {
            return Err(Error::invalid("configuration needs at least one image"));
        }
        if self.assignments.len() != maps.len() {
            return Err(Error::DimMismatch {
                context: "configuration image count",
                expected: maps.len(),
                got: self.assignments.len(),
            });
        }
        for (img, row) in self.assignments.iter().enumerate() {
            if row.len() != maps[img].len() {
                return Err(Error::DimMismatch {
                    context: "configuration keypoint count",
                    expected: maps[img].len(),
                    got: row.len(),
                });
            }
            for (kp, &(r, c)) in row.iter().enumerate() {
                let m = &maps[img][kp];
                if r >= m.rows() || c >= m.cols() {
                    return Err(Error::invalid(format!(
                        "assignment ({r},{c}) outside {}x{} grid (image {img}, keypoint {kp})",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A deterministic local scorer; higher means more keypoint-like. The
/// keypoint index selects which of the per-landmark models to apply.
pub trait LocalDetector {
    fn patch_size(&self) -> usize;
    fn score(&self, keypoint: usize, image: &GrayImage, x: f64, y: f64) -> f64;
}
