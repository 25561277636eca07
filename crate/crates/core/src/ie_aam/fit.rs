//! Inverse-compositional updates, warp composition, posterior projection
//! and the outer fitting loop.

use nalgebra::DVector;

use super::template::AamTemplate;
use super::{mesh_orientations, synthesize_shape, BackendModel, ParamDelta, WarpParams};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::shape::map_point_piecewise_affine;
use crate::Shape;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Convergence threshold on the max vertex displacement, pixels.
    pub tol: f64,
    /// One texture solve per this many shape iterations (0 disables).
    pub texture_every: usize,
    pub max_halvings: usize,
    /// Consecutive non-improving iterations before the fit is flagged.
    pub divergence_patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 0.01, texture_every: 5, max_halvings: 4, divergence_patience: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// Root-mean-square residual over the batch after each iteration.
    pub residual_trace: Vec<f64>,
    /// Max vertex displacement accepted at each iteration.
    pub step_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct AamFitResult {
    pub shapes: Vec<Shape>,
    pub params: WarpParams,
    pub texture: Vec<DVector<f64>>,
    pub diagnostics: FitDiagnostics,
}

fn residual_one(
    template: &AamTemplate,
    image: &GrayImage,
    shape: &Shape,
    texture: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let warped = template.hull.warp_image(image, shape, &template.mesh)?;
    let mut r = warped - &template.template_values;
    if let Some(c) = texture {
        if template.texture_basis.ncols() > 0 {
            r -= &template.texture_basis * c;
        }
    }
    Ok(r)
}

/// `dp = H^-1 sum_x [grad T dW/dp]^T [I(W(x;p)) - T(x)]` for one image.
pub fn ic_update_pca(
    template: &AamTemplate,
    image: &GrayImage,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    let BackendModel::Pca { basis } = &template.backend else {
        return Err(Error::invalid("ic_update_pca needs a PCA-backed template"));
    };
    if p.len() != basis.ncols() {
        return Err(Error::DimMismatch { context: "pca params", expected: basis.ncols(), got: p.len() });
    }
    let params = WarpParams::Pca { p: vec![p.clone()] };
    let shape = synthesize_shape(&template.base_shape, &template.backend, &params, 0);
    let r = residual_one(template, image, &shape, None)?;
    let rhs = template.sd_main.transpose() * r;
    let chol = template
        .chol_main
        .as_ref()
        .ok_or_else(|| Error::invalid("template has no usable shape Hessian"))?;
    Ok(chol.solve(&rhs))
}

/// Per-image expression updates plus one pooled identity update:
/// `dv_j = H_v^-1 SD_v^T r_j`, `dw = H_w^-1 SD_w^T mean_j(r_j)`.
pub fn ic_update_ie(
    template: &AamTemplate,
    images: &[GrayImage],
    params: &WarpParams,
) -> Result<ParamDelta> {
    let BackendModel::Ie { model } = &template.backend else {
        return Err(Error::invalid("ic_update_ie needs an IE-backed template"));
    };
    let WarpParams::Ie { w, v } = params else {
        return Err(Error::invalid("ic_update_ie needs IE warp parameters"));
    };
    if images.len() != v.len() {
        return Err(Error::DimMismatch { context: "batch size", expected: v.len(), got: images.len() });
    }
    let _ = w;
    let mut pooled = DVector::zeros(template.hull.len());
    let mut dv = Vec::with_capacity(images.len());
    for (j, image) in images.iter().enumerate() {
        let shape = synthesize_shape(&template.base_shape, &template.backend, params, j);
        let r = residual_one(template, image, &shape, None)?;
        let rhs = template.sd_main.transpose() * &r;
        let chol = template
            .chol_main
            .as_ref()
            .ok_or_else(|| Error::invalid("template has no usable expression Hessian"))?;
        dv.push(chol.solve(&rhs));
        pooled += r;
    }
    pooled /= images.len() as f64;
    let dw = if model.k() > 0 {
        let rhs = template.sd_identity.transpose() * pooled;
        let chol = template
            .chol_identity
            .as_ref()
            .ok_or_else(|| Error::invalid("template has no usable identity Hessian"))?;
        chol.solve(&rhs)
    } else {
        DVector::zeros(0)
    };
    Ok(ParamDelta::Ie { dw, dv })
}

/// Inverts the increment by negation, composes it with the current warp at
/// the vertex level, and re-projects the composed vertices onto the
/// backend's parameters (orthonormal transpose for PCA, stacked posterior
/// expectation for IE). Mesh fold-over rejects the step and halves the
/// increment.
pub fn compose_and_project(
    template: &AamTemplate,
    params: &WarpParams,
    delta: &ParamDelta,
) -> Result<WarpParams> {
    let j_count = params.batch_len();
    let s0 = &template.base_shape;
    let s0_vec = s0.to_vector();
    let reference_orient = mesh_orientations(s0, &template.mesh);

    let mut scaled = delta.scaled(1.0);
    const MAX_FOLD_HALVINGS: usize = 8;
    'attempt: for _ in 0..=MAX_FOLD_HALVINGS {
        let mut stacked = DVector::zeros(j_count * 2 * s0.len());
        for j in 0..j_count {
            let current = synthesize_shape(s0, &template.backend, params, j);
            // Template-frame vertices of the negated increment warp.
            let inc = match (&template.backend, &scaled) {
                (BackendModel::Pca { basis }, ParamDelta::Pca { dp }) => basis * &dp[j],
                (BackendModel::Ie { model }, ParamDelta::Ie { dw, dv }) => {
                    model.f() * dw + model.g() * &dv[j]
                }
                _ => return Err(Error::invalid("backend/delta kind mismatch")),
            };
            let mut composed = Vec::with_capacity(s0.len());
            for i in 0..s0.len() {
                let u = s0.point(i)
                    - nalgebra::Vector2::new(inc[2 * i], inc[2 * i + 1]);
                composed.push(map_point_piecewise_affine(s0, &current, &template.mesh, u)?);
            }
            let candidate = Shape::new(composed)?;
            let orient = mesh_orientations(&candidate, &template.mesh);
            let folded = orient
                .iter()
                .zip(&reference_orient)
                .any(|(&o, &r)| o.signum() != r.signum() || o.abs() < 1e-12);
            if folded {
                scaled = scaled.scaled(0.5);
                continue 'attempt;
            }
            let r = candidate.to_vector() - &s0_vec;
            stacked.rows_mut(j * 2 * s0.len(), 2 * s0.len()).copy_from(&r);
        }
        return project_stacked_vertices(template, j_count, &stacked);
    }
    Err(Error::invalid("warp composition kept folding the mesh after halvings"))
}

/// Projects stacked `s - s0` residuals onto the backend parameters.
pub(crate) fn project_stacked_vertices(
    template: &AamTemplate,
    j_count: usize,
    stacked: &DVector<f64>,
) -> Result<WarpParams> {
    let dim = 2 * template.base_shape.len();
    match &template.backend {
        BackendModel::Pca { basis } => {
            let mut p = Vec::with_capacity(j_count);
            for j in 0..j_count {
                let r = stacked.rows(j * dim, dim).into_owned();
                p.push(basis.transpose() * r);
            }
            Ok(WarpParams::Pca { p })
        }
        BackendModel::Ie { model } => {
            let d = model.project_stacked(j_count, stacked)?;
            let k = model.k();
            let l = model.l();
            let w = d.rows(0, k).into_owned();
            let v = (0..j_count).map(|j| d.rows(k + j * l, l).into_owned()).collect();
            Ok(WarpParams::Ie { w, v })
        }
    }
}

/// Least-squares texture coefficients per image at fixed shape.
pub fn estimate_texture(
    template: &AamTemplate,
    images: &[GrayImage],
    params: &WarpParams,
) -> Result<Vec<DVector<f64>>> {
    if template.texture_basis.ncols() == 0 {
        return Err(Error::invalid("template has no texture basis (rank 0)"));
    }
    let mut out = Vec::with_capacity(images.len());
    for (j, image) in images.iter().enumerate() {
        let shape = synthesize_shape(&template.base_shape, &template.backend, params, j);
        let warped = template.hull.warp_image(image, &shape, &template.mesh)?;
        let r = warped - &template.template_values;
        out.push(template.texture_basis.transpose() * r);
    }
    Ok(out)
}

fn batch_residual(
    template: &AamTemplate,
    images: &[GrayImage],
    params: &WarpParams,
    texture: &[DVector<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, image) in images.iter().enumerate() {
        let shape = synthesize_shape(&template.base_shape, &template.backend, params, j);
        let r = residual_one(template, image, &shape, texture.get(j))?;
        total += r.norm_squared();
        count += r.len();
    }
    Ok((total / count.max(1) as f64).sqrt())
}

fn max_vertex_move(template: &AamTemplate, a: &WarpParams, b: &WarpParams) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.batch_len() {
        let sa = synthesize_shape(&template.base_shape, &template.backend, a, j);
        let sb = synthesize_shape(&template.base_shape, &template.backend, b, j);
        for i in 0..sa.len() {
            worst = worst.max((sa.point(i) - sb.point(i)).norm());
        }
    }
    worst
}

fn zero_texture(template: &AamTemplate, j_count: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(template.texture_basis.ncols()); j_count]
}

/// Full fitting loop: update, compose, project, with reject-and-halve step
/// control and periodic texture re-estimation. Returns the best iterate if
/// the residual keeps growing.
pub fn fit(
    template: &AamTemplate,
    images: &[GrayImage],
    init: &[Shape],
    config: &FitConfig,
) -> Result<AamFitResult> {
    if images.is_empty() || images.len() != init.len() {
        return Err(Error::invalid("fit needs one initial shape per image"));
    }
    let j_count = images.len();
    let dim = 2 * template.base_shape.len();
    for s in init {
        if s.len() != template.base_shape.len() {
            return Err(Error::DimMismatch {
                context: "init shape points",
                expected: template.base_shape.len(),
                got: s.len(),
            });
        }
    }

    // Project the initializations into the parameter space.
    let s0_vec = template.base_shape.to_vector();
    let mut stacked = DVector::zeros(j_count * dim);
    for (j, s) in init.iter().enumerate() {
        stacked.rows_mut(j * dim, dim).copy_from(&(s.to_vector() - &s0_vec));
    }
    let mut params = project_stacked_vertices(template, j_count, &stacked)?;
    let mut texture = zero_texture(template, j_count);
    let mut residual = batch_residual(template, images, &params, &texture)?;

    let mut best_params = params.clone();
    let mut best_texture = texture.clone();
    let mut best_residual = residual;

    let mut diagnostics = FitDiagnostics {
        residual_trace: vec![residual],
        step_norms: Vec::new(),
        iterations: 0,
        converged: false,
        diverged: false,
    };
    let mut stall = 0usize;

    for iter in 1..=config.max_iters {
        diagnostics.iterations = iter;
        let delta = match &template.backend {
            BackendModel::Pca { .. } => {
                let WarpParams::Pca { p } = &params else { unreachable!() };
                let mut dp = Vec::with_capacity(j_count);
                for (j, image) in images.iter().enumerate() {
                    dp.push(ic_update_pca(template, image, &p[j])?);
                }
                ParamDelta::Pca { dp }
            }
            BackendModel::Ie { .. } => ic_update_ie(template, images, &params)?,
        };

        // Reject-and-halve: fold-over inside compose_and_project, residual
        // growth here.
        let mut accepted: Option<(WarpParams, f64)> = None;
        let mut trial = delta.scaled(1.0);
        for _ in 0..=config.max_halvings {
            let cand = match compose_and_project(template, &params, &trial) {
                Ok(c) => c,
                Err(Error::OutOfBounds { .. }) | Err(Error::Invalid(_)) => {
                    trial = trial.scaled(0.5);
                    continue;
                }
                Err(e) => return Err(e),
            };
            match batch_residual(template, images, &cand, &texture) {
                Ok(r) if r <= residual * (1.0 + 1e-12) + 1e-15 => {
                    accepted = Some((cand, r));
                    break;
                }
                Ok(_) => trial = trial.scaled(0.5),
                Err(Error::OutOfBounds { .. }) => trial = trial.scaled(0.5),
                Err(e) => return Err(e),
            }
        }

        let step_norm = match accepted {
            Some((cand, r)) => {
                let step = max_vertex_move(template, &params, &cand);
                params = cand;
                residual = r;
                stall = 0;
                step
            }
            None => {
                stall += 1;
                0.0
            }
        };
        diagnostics.step_norms.push(step_norm);

        // Texture alternation on the configured schedule.
        if config.texture_every > 0
            && template.texture_basis.ncols() > 0
            && iter % config.texture_every == 0
        {
            texture = estimate_texture(template, images, &params)?;
            residual = batch_residual(template, images, &params, &texture)?;
        }
        diagnostics.residual_trace.push(residual);

        if residual < best_residual {
            best_residual = residual;
            best_params = params.clone();
            best_texture = texture.clone();
        }

        if accepted_step_converged(step_norm, stall, config) {
            diagnostics.converged = true;
            break;
        }
        if stall >= config.divergence_patience {
            diagnostics.diverged = true;
            break;
        }
    }

    let shapes = (0..j_count)
        .map(|j| synthesize_shape(&template.base_shape, &template.backend, &best_params, j))
        .collect();
    Ok(AamFitResult { shapes, params: best_params, texture: best_texture, diagnostics })
}

fn accepted_step_converged(step_norm: f64, stall: usize, config: &FitConfig) -> bool {
    stall == 0 && step_norm < config.tol
}
