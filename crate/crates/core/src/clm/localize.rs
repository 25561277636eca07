//! Keypoint localization: response-map generation, peak initialization,
//! registration and ICM over the selected spatial energy.

use nalgebra::Vector2;

use super::energy::{energy_ie, energy_ppca, PriorWeight};
use super::icm::{icm_minimize, IcmConfig};
use super::{CandidateConfiguration, LocalDetector, ResponseMap};
use crate::error::{Error, Result};
use crate::factor_model::FactorModel;
use crate::image::GrayImage;
use crate::ppca::PpcaModel;
use crate::shape::{ransac_similarity, RansacConfig, SimilarityTransform};
use crate::Shape;

/// Spatial prior for localization.
#[derive(Debug, Clone, Copy)]
pub enum SpatialModel<'a> {
    Ppca(&'a PpcaModel),
    Ie(&'a FactorModel),
}

impl SpatialModel<'_> {
    fn keypoints(&self) -> usize {
        let d = match self {
            SpatialModel::Ppca(m) => m.dim(),
            SpatialModel::Ie(m) => m.d(),
        };
        d / 2
    }

    fn mean_shape(&self) -> Result<Shape> {
        let v = match self {
            SpatialModel::Ppca(m) => m.mean.clone(),
            SpatialModel::Ie(m) => m.mu().clone(),
        };
        Shape::from_vector(&v)
    }
}

/// How image coordinates map into the model frame for the prior term.
#[derive(Debug, Clone)]
pub enum RegistrationMode {
    /// Coordinates are already in the model frame.
    Identity,
    /// Estimate image-to-model similarity by RANSAC from the current
    /// configuration, refreshed once per outer sweep.
    Ransac(RansacConfig),
}

#[derive(Debug, Clone)]
pub struct LocalizeConfig {
    pub radius: usize,
    pub max_sweeps: usize,
    pub prior_weight: PriorWeight,
    pub registration: RegistrationMode,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            radius: 3,
            max_sweeps: 20,
            prior_weight: PriorWeight::Half,
            registration: RegistrationMode::Identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalizeOutcome {
    /// Final landmark coordinates per image, in the image frame.
    pub shapes: Vec<Shape>,
    pub config: CandidateConfiguration,
    pub energy: f64,
    pub energy_trace: Vec<f64>,
    pub converged: bool,
}

/// One `(2r+1)^2` grid per keypoint centered on the initialization,
/// clamped to stay inside the image (with the boundary flag set when
/// clamping moved it).
pub fn generate_response_maps(
    image: &GrayImage,
    init: &Shape,
    detector: &dyn LocalDetector,
    radius: usize,
) -> Result<Vec<ResponseMap>> {
    if radius == 0 {
        return Err(Error::invalid("search radius must be >= 1"));
    }
    let side = 2 * radius + 1;
    if image.width() < side || image.height() < side {
        return Err(Error::invalid(format!(
            "image {}x{} cannot host a {side}x{side} search grid",
            image.width(),
            image.height()
        )));
    }
    let mut maps = Vec::with_capacity(init.len());
    for (kp, p) in init.points().iter().enumerate() {
        let cx = p.x.round();
        let cy = p.y.round();
        let ox = (cx - radius as f64).clamp(0.0, (image.width() - side) as f64);
        let oy = (cy - radius as f64).clamp(0.0, (image.height() - side) as f64);
        let clamped = ox != cx - radius as f64 || oy != cy - radius as f64;
        let scores = nalgebra::DMatrix::from_fn(side, side, |r, c| {
            detector.score(kp, image, ox + c as f64, oy + r as f64)
        });
        let mut map = ResponseMap::new(kp, Vector2::new(ox, oy), 1.0, scores)?;
        map.clamped = clamped;
        maps.push(map);
    }
    Ok(maps)
}

fn argmax_config(maps: &[Vec<ResponseMap>]) -> CandidateConfiguration {
    CandidateConfiguration {
        assignments: maps
            .iter()
            .map(|image_maps| image_maps.iter().map(ResponseMap::argmax).collect())
            .collect(),
    }
}

fn config_shape(config: &CandidateConfiguration, maps: &[Vec<ResponseMap>], img: usize) -> Shape {
    Shape::new(
        config.assignments[img]
            .iter()
            .enumerate()
            .map(|(kp, &(r, c))| maps[img][kp].grid_to_image(r, c))
            .collect(),
    )
    .expect("grid coordinates are finite")
}

fn refresh_registrations(
    mode: &RegistrationMode,
    config: &CandidateConfiguration,
    maps: &[Vec<ResponseMap>],
    mean: &Shape,
) -> Result<Vec<SimilarityTransform>> {
    match mode {
        RegistrationMode::Identity => {
            Ok(vec![SimilarityTransform::identity(); config.images()])
        }
        RegistrationMode::Ransac(rc) => {
            let mut out = Vec::with_capacity(config.images());
            for img in 0..config.images() {
                let current = config_shape(config, maps, img);
                out.push(ransac_similarity(&current, mean, rc)?);
            }
            Ok(out)
        }
    }
}

/// Peak-initialized ICM over precomputed response maps. The registration is
/// refreshed from the current configuration once per outer sweep.
pub fn localize_from_maps(
    maps: &[Vec<ResponseMap>],
    spatial: SpatialModel<'_>,
    config: &LocalizeConfig,
) -> Result<LocalizeOutcome> {
    if maps.is_empty() {
        return Err(Error::invalid("localization needs at least one image"));
    }
    let n = spatial.keypoints();
    for image_maps in maps {
        if image_maps.len() != n {
            return Err(Error::DimMismatch {
                context: "response maps per image",
                expected: n,
                got: image_maps.len(),
            });
        }
    }
    let mean = spatial.mean_shape()?;
    let mut current = argmax_config(maps);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    let mut energy_of = |cfg: &CandidateConfiguration,
                         regs: &[SimilarityTransform]|
     -> Result<f64> {
        match spatial {
            SpatialModel::Ppca(m) => {
                let mut total = 0.0;
                for img in 0..cfg.images() {
                    total += energy_ppca(
                        &cfg.assignments[img],
                        &maps[img],
                        m,
                        &regs[img],
                        config.prior_weight,
                    )?;
                }
                Ok(total)
            }
            SpatialModel::Ie(m) => energy_ie(cfg, maps, m, regs, config.prior_weight),
        }
    };

    let mut final_energy = f64::INFINITY;
    for _sweep in 0..config.max_sweeps {
        let regs = refresh_registrations(&config.registration, &current, maps, &mean)?;
        let outcome = icm_minimize(
            |cfg| energy_of(cfg, &regs),
            &current,
            maps,
            &IcmConfig { max_sweeps: 1 },
        )?;
        let changed = outcome.config != current;
        current = outcome.config;
        final_energy = *outcome.energy_trace.last().expect("trace nonempty");
        trace.push(final_energy);
        if !changed {
            converged = true;
            break;
        }
    }

    let shapes = (0..maps.len()).map(|img| config_shape(&current, maps, img)).collect();
    Ok(LocalizeOutcome { shapes, config: current, energy: final_energy, energy_trace: trace, converged })
}

/// Full pipeline for a batch of same-identity images: generate response
/// maps around the initial shapes, then run [`localize_from_maps`].
pub fn localize(
    images: &[GrayImage],
    detector: &dyn LocalDetector,
    spatial: SpatialModel<'_>,
    init: &[Shape],
    config: &LocalizeConfig,
) -> Result<LocalizeOutcome> {
    if images.len() != init.len() || images.is_empty() {
        return Err(Error::invalid("localize needs one init shape per image"));
    }
    let mut maps = Vec::with_capacity(images.len());
    for (image, shape) in images.iter().zip(init) {
        maps.push(generate_response_maps(image, shape, detector, config.radius)?);
    }
    localize_from_maps(&maps, spatial, config)
}
