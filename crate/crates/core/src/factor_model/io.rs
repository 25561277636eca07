//! Versioned JSON persistence for [`FactorModel`].
//!
//! Schema: `{version, d, K, L, mu, F, G, sigma, lambda, rho}` with matrices
//! as row-major nested arrays of finite doubles.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FactorModel;
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "L")]
    l: usize,
    mu: Vec<f64>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    lambda: Vec<f64>,
    rho: Vec<f64>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().cloned().collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::schema(format!(
            "field {name}: expected {nrows} rows, found {}",
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::schema(format!(
                "field {name}: row {r} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        for (c, &v) in row.iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

impl FactorModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            version: MODEL_SCHEMA_VERSION,
            d: self.d(),
            k: self.k(),
            l: self.l(),
            mu: self.mu().iter().cloned().collect(),
            f: matrix_rows(self.f()),
            g: matrix_rows(self.g()),
            sigma: self.sigma().iter().cloned().collect(),
            lambda: self.lambda().iter().cloned().collect(),
            rho: self.rho().iter().cloned().collect(),
        };
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.version != MODEL_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
                file.version
            )));
        }
        if file.mu.len() != file.d {
            return Err(Error::schema(format!(
                "field mu: length {} does not match d = {}",
                file.mu.len(),
                file.d
            )));
        }
        let all = file
            .mu
            .iter()
            .chain(file.sigma.iter())
            .chain(file.lambda.iter())
            .chain(file.rho.iter())
            .chain(file.f.iter().flatten())
            .chain(file.g.iter().flatten());
        for &v in all {
            if !v.is_finite() {
                return Err(Error::schema("non-finite value in model file"));
            }
        }
        let f = rows_to_matrix(&file.f, file.d, file.k, "F")?;
        let g = rows_to_matrix(&file.g, file.d, file.l, "G")?;
        FactorModel::new(
            DVector::from_vec(file.mu),
            f,
            g,
            DVector::from_vec(file.sigma),
            DVector::from_vec(file.lambda),
            DVector::from_vec(file.rho),
        )
    }
}
