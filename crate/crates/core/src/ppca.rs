//! PCA and probabilistic-PCA models.
//!
//! The PPCA form keeps the top-`p` spectrum exactly and averages the
//! remaining eigenvalues into an isotropic noise term, giving the low-rank
//! covariance `Phi Phi^T + sigma^2 I` whose Mahalanobis energy is the
//! spatial prior of the PPCA-fitted local models.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PPCA_SCHEMA_VERSION: u32 = 1;

/// Output of [`fit_pca`]: full spectrum, leading eigenvectors, sample mean.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub mean: DVector<f64>,
    /// n x p matrix of the leading eigenvectors (orthonormal columns).
    pub components: DMatrix<f64>,
    /// All n eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
}

/// Low-rank Gaussian with covariance `Phi Phi^T + sigma^2 I`.
#[derive(Debug, Clone)]
pub struct PpcaModel {
    pub mean: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub sigma2: f64,
    /// Retained eigenvalues lambda_1..lambda_p.
    pub eigvals: DVector<f64>,
}

/// Eigendecomposition of the 1/(N-1) sample covariance. Eigenvalues are
/// returned in descending order with a deterministic sign convention: the
/// largest-magnitude entry of each eigenvector is positive.
pub fn fit_pca(data: &[DVector<f64>], p: usize) -> Result<PcaFit> {
    if p == 0 {
        return Err(Error::invalid("fit_pca requires p >= 1"));
    }
    if data.len() < p + 1 {
        return Err(Error::invalid(format!(
            "fit_pca requires at least p+1 = {} samples, got {}",
            p + 1,
            data.len()
        )));
    }
    let n = data[0].len();
    if p >= n {
        return Err(Error::invalid(format!("fit_pca requires p < n ({p} >= {n})")));
    }
    for x in data {
        if x.len() != n {
            return Err(Error::DimMismatch { context: "fit_pca sample length", expected: n, got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("fit_pca input"));
        }
    }

    let mut mean = DVector::zeros(n);
    for x in data {
        mean += x;
    }
    mean /= data.len() as f64;

    let m = data.len();
    let (eigenvalues, mut components) = if n <= m {
        // Dense covariance route.
        let mut cov = DMatrix::zeros(n, n);
        for x in data {
            let r = x - &mean;
            cov += &r * r.transpose();
        }
        cov /= (m - 1) as f64;
        let eig = cov.symmetric_eigen();
        let order = descending_order(&eig.eigenvalues);
        let mut eigenvalues = DVector::zeros(n);
        let mut components = DMatrix::zeros(n, p);
        for (rank, &idx) in order.iter().enumerate() {
            eigenvalues[rank] = eig.eigenvalues[idx];
            if rank < p {
                components.column_mut(rank).copy_from(&eig.eigenvectors.column(idx));
            }
        }
        (eigenvalues, components)
    } else {
        // Gram route for high-dimensional data with few samples: the
        // nonzero spectrum of X X^T / (m-1) equals that of X^T X / (m-1).
        let mut x = DMatrix::zeros(n, m);
        for (c, sample) in data.iter().enumerate() {
            x.column_mut(c).copy_from(&(sample - &mean));
        }
        let gram = (x.transpose() * &x) / (m - 1) as f64;
        let eig = gram.symmetric_eigen();
        let order = descending_order(&eig.eigenvalues);
        let mut eigenvalues = DVector::zeros(n);
        let mut components = DMatrix::zeros(n, p);
        for (rank, &idx) in order.iter().enumerate() {
            let lam = eig.eigenvalues[idx];
            eigenvalues[rank] = lam.max(0.0);
            if rank < p {
                let dir = &x * eig.eigenvectors.column(idx);
                let norm = dir.norm();
                if norm > 1e-12 {
                    components.column_mut(rank).copy_from(&(dir / norm));
                }
            }
        }
        (eigenvalues, components)
    };

    // Sign convention: flip so the largest-magnitude entry is positive.
    for c in 0..p {
        let col = components.column(c);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if components[(pivot, c)] < 0.0 {
            let mut col = components.column_mut(c);
            col.neg_mut();
        }
    }

    Ok(PcaFit { mean, components, eigenvalues })
}

fn descending_order(eigenvalues: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Builds the PPCA model from a PCA fit: `sigma^2` is the mean of the
/// trailing eigenvalues and `Phi = U_p (Lambda_p - sigma^2 I)^{1/2}` (the
/// arbitrary orthogonal factor fixed to identity). Negative gaps clamp to
/// zero; a relative floor keeps `sigma^2` positive on rank-deficient data.
pub fn ppca_from_pca(fit: &PcaFit, p: usize) -> Result<PpcaModel> {
    let n = fit.eigenvalues.len();
    if p >= n {
        return Err(Error::invalid(format!("ppca_from_pca requires p < n ({p} >= {n})")));
    }
    if fit.components.ncols() < p {
        return Err(Error::invalid(format!(
            "pca fit holds {} components, requested p = {p}",
            fit.components.ncols()
        )));
    }
    let trailing = n - p;
    let mut sigma2 = fit.eigenvalues.rows(p, trailing).sum() / trailing as f64;
    let mean_eig = (fit.eigenvalues.sum() / n as f64).abs();
    let floor = (1e-8 * mean_eig).max(f64::MIN_POSITIVE);
    if sigma2 < floor {
        sigma2 = floor;
    }

    let mut phi = DMatrix::zeros(n, p);
    for c in 0..p {
        let gap = (fit.eigenvalues[c] - sigma2).max(0.0).sqrt();
        phi.column_mut(c).copy_from(&(fit.components.column(c) * gap));
    }
    let eigvals = fit.eigenvalues.rows(0, p).into_owned();
    Ok(PpcaModel { mean: fit.mean.clone(), phi, sigma2, eigvals })
}

impl PpcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    /// `(z - mu)^T (Phi Phi^T + sigma2 I)^-1 (z - mu) / 2` in O(n p^2) via
    /// the Woodbury identity.
    pub fn mahalanobis_energy(&self, z: &DVector<f64>) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimMismatch { context: "mahalanobis input", expected: self.dim(), got: z.len() });
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mahalanobis input"));
        }
        let r = z - &self.mean;
        let p = self.rank();
        if p == 0 {
            return Ok(r.norm_squared() / (2.0 * self.sigma2));
        }
        // (s I + Phi Phi^T)^-1 = (I - Phi (s I_p + Phi^T Phi)^-1 Phi^T)/s
        let ptr = self.phi.transpose() * &r;
        let mut small = self.phi.transpose() * &self.phi;
        for i in 0..p {
            small[(i, i)] += self.sigma2;
        }
        let chol = nalgebra::Cholesky::new(small)
            .ok_or(Error::Singular { context: "ppca woodbury core", cond: f64::INFINITY })?;
        let quad = (r.norm_squared() - ptr.dot(&chol.solve(&ptr))) / self.sigma2;
        Ok(0.5 * quad)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = PpcaFile {
            version: PPCA_SCHEMA_VERSION,
            mean: self.mean.iter().cloned().collect(),
            phi: (0..self.phi.nrows())
                .map(|r| self.phi.row(r).iter().cloned().collect())
                .collect(),
            sigma2: self.sigma2,
            eigvals: self.eigvals.iter().cloned().collect(),
        };
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: PpcaFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.version != PPCA_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "unsupported ppca schema version {} (expected {PPCA_SCHEMA_VERSION})",
                file.version
            )));
        }
        if !(file.sigma2.is_finite() && file.sigma2 > 0.0) {
            return Err(Error::schema("field sigma2 must be finite and positive"));
        }
        let n = file.mean.len();
        let p = file.eigvals.len();
        if file.phi.len() != n {
            return Err(Error::schema(format!("field phi: expected {n} rows, found {}", file.phi.len())));
        }
        let mut phi = DMatrix::zeros(n, p);
        for (r, row) in file.phi.iter().enumerate() {
            if row.len() != p {
                return Err(Error::schema(format!(
                    "field phi: row {r} has {} entries, expected {p}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::schema("non-finite value in ppca file"));
                }
                phi[(r, c)] = v;
            }
        }
        Ok(Self {
            mean: DVector::from_vec(file.mean),
            phi,
            sigma2: file.sigma2,
            eigvals: DVector::from_vec(file.eigvals),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PpcaFile {
    version: u32,
    mean: Vec<f64>,
    phi: Vec<Vec<f64>>,
    sigma2: f64,
    eigvals: Vec<f64>,
}
