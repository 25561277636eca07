//! Template construction: base shape, mean texture, gradients, steepest
//! descent images and Hessians, all precomputed at the base shape.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector2};

use super::{BackendModel, BackendSpec};
use crate::error::{Error, Result};
use crate::factor_model::{fit_em, FactorModel, IdentityGroup};
use crate::image::GrayImage;
use crate::ppca;
use crate::shape::{
    generalized_procrustes, orthonormalize_against, similarity_basis, triangulate, TriangleMesh,
};
use crate::Shape;

/// One training example: an image with its landmark annotation and the
/// identity it belongs to.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub identity: String,
    pub image: GrayImage,
    pub shape: Shape,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub backend: BackendSpec,
    /// Append the 4-column similarity block to the shape basis / expression
    /// loading so in-plane pose is part of the search space.
    pub pose_in_basis: bool,
    /// Prior variance given to the pose columns in the IE backend.
    pub pose_variance: f64,
    /// Number of texture principal components (0 disables the texture model).
    pub texture_components: usize,
    /// Margin around the base shape in the template frame, pixels.
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backend: BackendSpec::Pca { components: 4 },
            pose_in_basis: true,
            pose_variance: 50.0,
            texture_components: 0,
            margin: 4.0,
        }
    }
}

/// Per-pixel lookup for every template pixel inside the base hull:
/// coordinates, owning triangle and barycentric weights.
#[derive(Debug, Clone)]
pub(crate) struct PixelTable {
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
    pub tri: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
}

impl PixelTable {
    pub(crate) fn build(s0: &Shape, mesh: &TriangleMesh, width: usize, height: usize) -> Self {
        const EDGE_EPS: f64 = 1e-9;
        let mut claimed = vec![false; width * height];
        let mut table = PixelTable { xs: Vec::new(), ys: Vec::new(), tri: Vec::new(), bary: Vec::new() };
        for (ti, tri) in mesh.triangles.iter().enumerate() {
            let (a, b, c) = (s0.point(tri[0]), s0.point(tri[1]), s0.point(tri[2]));
            let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            if det.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let x_min = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
            let x_max = (a.x.max(b.x).max(c.x).ceil() as usize).min(width - 1);
            let y_min = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
            let y_max = (a.y.max(b.y).max(c.y).ceil() as usize).min(height - 1);
            for y in y_min..=y_max {
                for x in x_min..=x_max {
                    let idx = y * width + x;
                    if claimed[idx] {
                        continue;
                    }
                    let p = Vector2::new(x as f64, y as f64);
                    let beta = ((p.x - a.x) * (c.y - a.y) - (p.y - a.y) * (c.x - a.x)) / det;
                    let gamma = ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) / det;
                    let alpha = 1.0 - beta - gamma;
                    if alpha < -EDGE_EPS || beta < -EDGE_EPS || gamma < -EDGE_EPS {
                        continue;
                    }
                    claimed[idx] = true;
                    table.xs.push(x);
                    table.ys.push(y);
                    table.tri.push(ti);
                    table.bary.push([alpha, beta, gamma]);
                }
            }
        }
        table
    }

    pub(crate) fn len(&self) -> usize {
        self.xs.len()
    }

    /// Samples `image` at the warped location of each hull pixel under the
    /// piecewise-affine map `s0 -> shape`. Errors if the shape leaves the
    /// image bounds.
    pub(crate) fn warp_image(
        &self,
        image: &GrayImage,
        shape: &Shape,
        mesh: &TriangleMesh,
    ) -> Result<DVector<f64>> {
        let (mut lo_x, mut lo_y) = (f64::INFINITY, f64::INFINITY);
        let (mut hi_x, mut hi_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in shape.points() {
            lo_x = lo_x.min(p.x);
            lo_y = lo_y.min(p.y);
            hi_x = hi_x.max(p.x);
            hi_y = hi_y.max(p.y);
        }
        if lo_x < -0.5
            || lo_y < -0.5
            || hi_x > image.width() as f64 - 0.5
            || hi_y > image.height() as f64 - 0.5
        {
            return Err(Error::OutOfBounds {
                context: "warp_image",
                report: format!(
                    "shape bbox [{lo_x:.1},{hi_x:.1}]x[{lo_y:.1},{hi_y:.1}] vs image {}x{}",
                    image.width(),
                    image.height()
                ),
            });
        }
        let mut out = DVector::zeros(self.len());
        for i in 0..self.len() {
            let t = mesh.triangles[self.tri[i]];
            let b = self.bary[i];
            let sp = shape.point(t[0]) * b[0] + shape.point(t[1]) * b[1] + shape.point(t[2]) * b[2];
            out[i] = image.sample(sp.x, sp.y);
        }
        Ok(out)
    }

    /// Template values gathered over hull pixels.
    pub(crate) fn gather(&self, image: &GrayImage) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        for i in 0..self.len() {
            out[i] = image.get(self.xs[i], self.ys[i]);
        }
        out
    }
}

/// A fully precomputed template ready for fitting.
#[derive(Debug, Clone)]
pub struct AamTemplate {
    pub base_shape: Shape,
    pub mesh: TriangleMesh,
    /// Mean shape-normalized texture on the template frame.
    pub template: GrayImage,
    pub backend: BackendModel,
    /// Orthonormal texture basis over hull pixels (may have 0 columns).
    pub texture_basis: DMatrix<f64>,
    pub warnings: Vec<String>,
    pub(crate) hull: PixelTable,
    pub(crate) template_values: DVector<f64>,
    pub(crate) sd_main: DMatrix<f64>,
    pub(crate) sd_identity: DMatrix<f64>,
    pub(crate) chol_main: Option<Cholesky<f64, Dyn>>,
    pub(crate) chol_identity: Option<Cholesky<f64, Dyn>>,
}

impl AamTemplate {
    pub fn hull_pixel_count(&self) -> usize {
        self.hull.len()
    }

    /// Main-block Hessian (PCA: full; IE: expression+pose block).
    pub fn hessian_main(&self) -> DMatrix<f64> {
        self.sd_main.transpose() * &self.sd_main
    }

    pub fn hessian_identity(&self) -> DMatrix<f64> {
        self.sd_identity.transpose() * &self.sd_identity
    }
}

/// Ridge-regularizes until the Cholesky succeeds; returns the factor and
/// whether regularization was needed. A zero-size matrix yields `None`.
fn robust_cholesky(h: &DMatrix<f64>, warnings: &mut Vec<String>, what: &str) -> Option<Cholesky<f64, Dyn>> {
    if h.nrows() == 0 {
        return None;
    }
    if let Some(c) = Cholesky::new(h.clone()) {
        return Some(c);
    }
    let mut ridge = 1e-8 * (h.trace().abs() / h.nrows() as f64).max(1e-12);
    for _ in 0..16 {
        let mut reg = h.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(reg) {
            warnings.push(format!("{what} Hessian was singular; ridge {ridge:.3e} applied"));
            return Some(c);
        }
        ridge *= 10.0;
    }
    warnings.push(format!("{what} Hessian unusable even after regularization"));
    None
}

/// Builds the base shape, mean texture, gradients, steepest-descent images
/// and Hessian factorizations from labeled training examples.
pub fn build_template(examples: &[LabeledImage], config: &TrainConfig) -> Result<AamTemplate> {
    if examples.is_empty() {
        return Err(Error::invalid("template training needs at least one labeled example"));
    }
    let n = examples[0].shape.len();
    if n < 3 {
        return Err(Error::invalid("template training needs shapes with >= 3 landmarks"));
    }
    for e in examples {
        if e.shape.len() != n {
            return Err(Error::DimMismatch { context: "training shape points", expected: n, got: e.shape.len() });
        }
    }

    // Base frame: Procrustes mean rescaled to the average training size and
    // shifted into a margin-padded template image.
    let shapes: Vec<Shape> = examples.iter().map(|e| e.shape.clone()).collect();
    let (mean_unit, aligned_unit) = if examples.len() >= 2 {
        let gpa = generalized_procrustes(&shapes, 1e-9, 100)?;
        (gpa.mean, gpa.aligned)
    } else {
        let m = shapes[0].translated(-shapes[0].centroid());
        let size = m.centroid_size();
        if size <= f64::MIN_POSITIVE {
            return Err(Error::invalid("degenerate training shape"));
        }
        (m.scaled(1.0 / size), vec![shapes[0].clone()])
    };
    let scale = shapes.iter().map(|s| s.centroid_size()).sum::<f64>() / shapes.len() as f64;
    let scaled_mean = mean_unit.scaled(scale);
    let (lo, hi) = scaled_mean.bounding_box();
    let offset = Vector2::new(config.margin - lo.x, config.margin - lo.y);
    let base_shape = scaled_mean.translated(offset);
    let width = (hi.x - lo.x + 2.0 * config.margin).ceil() as usize + 1;
    let height = (hi.y - lo.y + 2.0 * config.margin).ceil() as usize + 1;
    if (hi.x - lo.x) < 16.0 || (hi.y - lo.y) < 16.0 {
        return Err(Error::invalid(format!(
            "template hull too small: {:.1} x {:.1} px (need >= 16)",
            hi.x - lo.x,
            hi.y - lo.y
        )));
    }

    let mesh = triangulate(&base_shape)?;
    let hull = PixelTable::build(&base_shape, &mesh, width, height);
    if hull.len() < 16 {
        return Err(Error::invalid("template hull rasterizes to fewer than 16 pixels"));
    }

    // Training shapes mapped into the template frame.
    let frame_shapes: Vec<Shape> = if examples.len() >= 2 {
        aligned_unit.iter().map(|s| s.scaled(scale).translated(offset)).collect()
    } else {
        vec![base_shape.clone()]
    };

    // Mean shape-normalized texture.
    let mut warnings = Vec::new();
    let mut acc = DVector::zeros(hull.len());
    for e in examples {
        acc += hull.warp_image(&e.image, &e.shape, &mesh)?;
    }
    let template_values = acc / examples.len() as f64;
    let mut template = GrayImage::zeros(width, height);
    for i in 0..hull.len() {
        template.set(hull.xs[i], hull.ys[i], template_values[i]);
    }

    // Shape model on residuals from the base shape.
    let s0_vec = base_shape.to_vector();
    let pose = if config.pose_in_basis {
        similarity_basis(&base_shape, &frame_shapes)?
    } else {
        DMatrix::zeros(2 * n, 0)
    };
    let backend = match &config.backend {
        BackendSpec::Pca { components } => {
            let deviations: Vec<DVector<f64>> =
                frame_shapes.iter().map(|s| s.to_vector() - &s0_vec).collect();
            let q = (*components).min(deviations.len().saturating_sub(1)).min(2 * n - 1);
            let shape_cols = if q > 0 {
                let fit = ppca::fit_pca(&deviations, q)?;
                orthonormalize_against(&pose, &fit.components)
            } else {
                DMatrix::zeros(2 * n, 0)
            };
            let mut basis = DMatrix::zeros(2 * n, pose.ncols() + shape_cols.ncols());
            basis.view_mut((0, 0), (2 * n, pose.ncols())).copy_from(&pose);
            basis
                .view_mut((0, pose.ncols()), (2 * n, shape_cols.ncols()))
                .copy_from(&shape_cols);
            if basis.ncols() == 0 {
                return Err(Error::invalid("PCA backend ended up with an empty basis"));
            }
            BackendModel::Pca { basis }
        }
        BackendSpec::Ie { k, l, em } => {
            let mut groups: Vec<IdentityGroup> = Vec::new();
            for (e, s) in examples.iter().zip(&frame_shapes) {
                let vec = s.to_vector() - &s0_vec;
                match groups.iter_mut().find(|g| g.identity_id == e.identity) {
                    Some(g) => g.observations.push(vec),
                    None => groups.push(IdentityGroup::new(e.identity.clone(), vec![vec])?),
                }
            }
            let fit = fit_em(&groups, *k, *l, em)?;
            warnings.extend(fit.warnings);
            let m = fit.model;
            // Pose columns join the expression loading with their own prior.
            let l_aug = pose.ncols() + m.l();
            let mut g_aug = DMatrix::zeros(2 * n, l_aug);
            g_aug.view_mut((0, 0), (2 * n, pose.ncols())).copy_from(&pose);
            g_aug.view_mut((0, pose.ncols()), (2 * n, m.l())).copy_from(m.g());
            let mut rho_aug = DVector::zeros(l_aug);
            for i in 0..pose.ncols() {
                rho_aug[i] = config.pose_variance;
            }
            rho_aug.rows_mut(pose.ncols(), m.l()).copy_from(m.rho());
            let model = FactorModel::new(
                m.mu().clone(),
                m.f().clone(),
                g_aug,
                m.sigma().clone(),
                m.lambda().clone(),
                rho_aug,
            )?;
            BackendModel::Ie { model }
        }
    };

    // Texture basis from the shape-normalized training textures.
    let texture_basis = if config.texture_components > 0 && examples.len() > 1 {
        let mut textures = Vec::with_capacity(examples.len());
        for e in examples {
            textures.push(hull.warp_image(&e.image, &e.shape, &mesh)?);
        }
        let q = config.texture_components.min(textures.len() - 1).min(hull.len() - 1);
        let fit = ppca::fit_pca(&textures, q)?;
        fit.components
    } else {
        DMatrix::zeros(hull.len(), 0)
    };

    let mut tmpl = AamTemplate {
        base_shape,
        mesh,
        template,
        backend,
        texture_basis,
        warnings,
        hull,
        template_values,
        sd_main: DMatrix::zeros(0, 0),
        sd_identity: DMatrix::zeros(0, 0),
        chol_main: None,
        chol_identity: None,
    };
    finish_precomputation(&mut tmpl);
    Ok(tmpl)
}

/// Gradients, steepest-descent images and Hessian factorizations at the
/// base shape; shared by training and loading.
pub(crate) fn finish_precomputation(tmpl: &mut AamTemplate) {
    tmpl.template_values = tmpl.hull.gather(&tmpl.template);
    let (gx, gy) = tmpl.template.gradients();
    let (sd_main, sd_identity) =
        steepest_descent(&tmpl.hull, &tmpl.mesh, &gx, &gy, &tmpl.backend);
    let h_main = sd_main.transpose() * &sd_main;
    let h_id = sd_identity.transpose() * &sd_identity;
    tmpl.chol_main = robust_cholesky(&h_main, &mut tmpl.warnings, "shape");
    tmpl.chol_identity = robust_cholesky(&h_id, &mut tmpl.warnings, "identity");
    tmpl.sd_main = sd_main;
    tmpl.sd_identity = sd_identity;
}

/// Steepest-descent images `grad T * dW/dparam` per hull pixel. For PCA the
/// main block covers all columns; for IE the main block is the expression
/// (plus pose) loading and the identity block is `F`.
fn steepest_descent(
    hull: &PixelTable,
    mesh: &TriangleMesh,
    gx: &GrayImage,
    gy: &GrayImage,
    backend: &BackendModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (main, identity): (&DMatrix<f64>, Option<&DMatrix<f64>>) = match backend {
        BackendModel::Pca { basis } => (basis, None),
        BackendModel::Ie { model } => (model.g(), Some(model.f())),
    };
    let build = |cols: &DMatrix<f64>| -> DMatrix<f64> {
        let q = cols.ncols();
        let mut sd = DMatrix::zeros(hull.len(), q);
        for i in 0..hull.len() {
            let t = mesh.triangles[hull.tri[i]];
            let b = hull.bary[i];
            let gxv = gx.get(hull.xs[i], hull.ys[i]);
            let gyv = gy.get(hull.xs[i], hull.ys[i]);
            for c in 0..q {
                let mut wx = 0.0;
                let mut wy = 0.0;
                for (m, &vi) in t.iter().enumerate() {
                    wx += b[m] * cols[(2 * vi, c)];
                    wy += b[m] * cols[(2 * vi + 1, c)];
                }
                sd[(i, c)] = gxv * wx + gyv * wy;
            }
        }
        sd
    };
    let sd_main = build(main);
    let sd_identity = match identity {
        Some(f) => build(f),
        None => DMatrix::zeros(hull.len(), 0),
    };
    (sd_main, sd_identity)
}
