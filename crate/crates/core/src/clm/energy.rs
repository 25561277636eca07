//! Spatial interaction energies: detector scores plus a shape prior.

use nalgebra::DVector;

use super::{CandidateConfiguration, ResponseMap};
use crate::error::{Error, Result};
use crate::factor_model::FactorModel;
use crate::ppca::PpcaModel;
use crate::shape::SimilarityTransform;

/// Weighting of the quadratic prior term. `Half` applies the 1/2 Gaussian
/// convention to both energies; `PaperLiteral` keeps 1/2 for the PPCA
/// energy but uses the full quadratic in the identity-expression energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorWeight {
    #[default]
    Half,
    PaperLiteral,
}

impl PriorWeight {
    fn ppca_factor(self) -> f64 {
        // Both conventions carry the 1/2 here.
        1.0
    }

    fn ie_factor(self) -> f64 {
        match self {
            PriorWeight::Half => 0.5,
            PriorWeight::PaperLiteral => 1.0,
        }
    }
}

fn registered_coords(
    assignment: &[(usize, usize)],
    maps: &[ResponseMap],
    registration: &SimilarityTransform,
) -> DVector<f64> {
    let n = assignment.len();
    let mut z = DVector::zeros(2 * n);
    for (i, &(r, c)) in assignment.iter().enumerate() {
        let p = registration.apply(maps[i].grid_to_image(r, c));
        z[2 * i] = p.x;
        z[2 * i + 1] = p.y;
    }
    z
}

fn score_sum(assignment: &[(usize, usize)], maps: &[ResponseMap]) -> f64 {
    assignment.iter().enumerate().map(|(i, &cell)| maps[i].score_at(cell)).sum()
}

/// Single-image energy: `-sum_i s_i(z_i) + 1/2 (z-mu)^T (Phi Phi^T +
/// sigma^2 I)^-1 (z-mu)` with `z` the configuration mapped into the
/// registered frame.
pub fn energy_ppca(
    assignment: &[(usize, usize)],
    maps: &[ResponseMap],
    ppca: &PpcaModel,
    registration: &SimilarityTransform,
    weight: PriorWeight,
) -> Result<f64> {
    if assignment.len() != maps.len() {
        return Err(Error::DimMismatch {
            context: "ppca energy keypoints",
            expected: maps.len(),
            got: assignment.len(),
        });
    }
    if ppca.dim() != 2 * assignment.len() {
        return Err(Error::DimMismatch {
            context: "ppca model dimension",
            expected: 2 * assignment.len(),
            got: ppca.dim(),
        });
    }
    let z = registered_coords(assignment, maps, registration);
    let prior = ppca.mahalanobis_energy(&z)?;
    Ok(-score_sum(assignment, maps) + weight.ppca_factor() * prior)
}

/// Batch energy over all images of one identity: detector scores plus the
/// marginal Gaussian of the stacked registered configuration under the
/// identity-expression model, evaluated through the latent-sized precision.
pub fn energy_ie(
    config: &CandidateConfiguration,
    maps: &[Vec<ResponseMap>],
    model: &FactorModel,
    registrations: &[SimilarityTransform],
    weight: PriorWeight,
) -> Result<f64> {
    config.validate(maps)?;
    let j = config.images();
    if registrations.len() != j {
        return Err(Error::DimMismatch {
            context: "ie energy registrations",
            expected: j,
            got: registrations.len(),
        });
    }
    let n = config.keypoints();
    if model.d() != 2 * n {
        return Err(Error::DimMismatch {
            context: "ie model dimension",
            expected: 2 * n,
            got: model.d(),
        });
    }
    let mut scores = 0.0;
    let mut stacked = DVector::zeros(j * 2 * n);
    for img in 0..j {
        scores += score_sum(&config.assignments[img], &maps[img]);
        let z = registered_coords(&config.assignments[img], &maps[img], &registrations[img]);
        stacked.rows_mut(img * 2 * n, 2 * n).copy_from(&(z - model.mu()));
    }
    let quad = model.stacked_mahalanobis(j, &stacked)?;
    Ok(-scores + weight.ie_factor() * quad)
}
