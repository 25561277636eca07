//! Template persistence: JSON manifest plus a PGM texture payload.
//!
//! The manifest stores the base shape, mesh, backend parameters and texture
//! basis; gradients, steepest-descent images and Hessians are recomputed on
//! load. Payload files live next to the manifest with derived names.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::template::{AamTemplate, PixelTable};
use super::BackendModel;
use crate::error::{Error, Result};
use crate::factor_model::FactorModel;
use crate::image::GrayImage;
use crate::shape::TriangleMesh;
use crate::Shape;

pub const TEMPLATE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    version: u32,
    base_shape: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    width: usize,
    height: usize,
    backend: BackendFile,
    texture_basis: Vec<Vec<f64>>,
    texture_pgm: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BackendFile {
    Pca { basis: Vec<Vec<f64>> },
    Ie { model: String },
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().cloned().collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut m = DMatrix::zeros(nrows, ncols);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::schema(format!("field {name}: ragged row {r}")));
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::schema(format!("field {name}: non-finite entry")));
            }
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

impl AamTemplate {
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let stem = manifest_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let texture_pgm = format!("{stem}_texture.pgm");
        self.template.save_pgm(dir.join(&texture_pgm))?;

        let backend = match &self.backend {
            BackendModel::Pca { basis } => BackendFile::Pca { basis: matrix_rows(basis) },
            BackendModel::Ie { model } => {
                let model_file = format!("{stem}_model.json");
                model.save(dir.join(&model_file))?;
                BackendFile::Ie { model: model_file }
            }
        };
        let file = TemplateFile {
            version: TEMPLATE_SCHEMA_VERSION,
            base_shape: self.base_shape.points().iter().map(|p| [p.x, p.y]).collect(),
            triangles: self.mesh.triangles.clone(),
            width: self.template.width(),
            height: self.template.height(),
            backend,
            texture_basis: matrix_rows(&self.texture_basis),
            texture_pgm,
        };
        let out = BufWriter::new(File::create(manifest_path)?);
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let file: TemplateFile =
            serde_json::from_reader(BufReader::new(File::open(manifest_path)?))?;
        if file.version != TEMPLATE_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "unsupported template schema version {} (expected {TEMPLATE_SCHEMA_VERSION})",
                file.version
            )));
        }
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base_shape =
            Shape::from_xy(&file.base_shape.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())?;
        let mesh = TriangleMesh { triangles: file.triangles };
        mesh.validate(&base_shape)?;
        let template = GrayImage::load_pgm(dir.join(&file.texture_pgm))?;
        if template.width() != file.width || template.height() != file.height {
            return Err(Error::schema("texture payload size disagrees with manifest"));
        }
        let backend = match file.backend {
            BackendFile::Pca { basis } => BackendModel::Pca { basis: rows_to_matrix(&basis, "basis")? },
            BackendFile::Ie { model } => {
                BackendModel::Ie { model: FactorModel::load(dir.join(model))? }
            }
        };
        let texture_basis = rows_to_matrix(&file.texture_basis, "texture_basis")?;
        rebuild(base_shape, mesh, template, backend, texture_basis)
    }
}

/// Recomputes the derived state (hull table, gradients, steepest-descent
/// images, Hessian factorizations) from the persisted fields.
pub(crate) fn rebuild(
    base_shape: Shape,
    mesh: TriangleMesh,
    template: GrayImage,
    backend: BackendModel,
    texture_basis: DMatrix<f64>,
) -> Result<AamTemplate> {
    let hull = PixelTable::build(&base_shape, &mesh, template.width(), template.height());
    if hull.len() == 0 {
        return Err(Error::schema("template hull is empty"));
    }
    if texture_basis.nrows() != 0 && texture_basis.nrows() != hull.len() {
        return Err(Error::schema(format!(
            "texture basis rows {} do not match hull pixels {}",
            texture_basis.nrows(),
            hull.len()
        )));
    }
    let expected_cols = 2 * base_shape.len();
    match &backend {
        BackendModel::Pca { basis } => {
            if basis.nrows() != expected_cols {
                return Err(Error::schema("PCA basis row count does not match shape size"));
            }
        }
        BackendModel::Ie { model } => {
            if model.d() != expected_cols {
                return Err(Error::schema("IE model dimension does not match shape size"));
            }
        }
    }
    let mut tmpl = AamTemplate {
        base_shape,
        mesh,
        template,
        backend,
        texture_basis,
        warnings: Vec::new(),
        hull,
        template_values: DVector::zeros(0),
        sd_main: DMatrix::zeros(0, 0),
        sd_identity: DMatrix::zeros(0, 0),
        chol_main: None,
        chol_identity: None,
    };
    super::template::finish_precomputation(&mut tmpl);
    Ok(tmpl)
}
