use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FactorModel, IdentityGroup, SufficientStats};
use crate::error::{Error, Result};
use crate::ppca;

/// Training knobs for [`fit_em`].
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    pub rel_tolerance: f64,
    pub seed: u64,
    /// Relative variance floor on sigma, lambda, rho.
    pub variance_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 500, rel_tolerance: 1e-6, seed: 0, variance_floor: 1e-6 }
    }
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: FactorModel,
    /// Marginal log-likelihood after each M-step.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Alternates posterior inference over identity groups with the closed-form
/// parameter update until the relative log-likelihood gain drops below
/// `config.rel_tolerance` or `config.max_iters` is reached.
pub fn fit_em(
    dataset: &[IdentityGroup],
    k: usize,
    l: usize,
    config: &EmConfig,
) -> Result<EmFit> {
    if dataset.len() < 2 {
        return Err(Error::invalid("EM training needs at least two identities"));
    }
    if l == 0 {
        return Err(Error::invalid("EM training needs L >= 1"));
    }
    let d = dataset[0].dim();
    let mut min_j = usize::MAX;
    for g in dataset {
        if g.dim() != d {
            return Err(Error::DimMismatch { context: "dataset dimension", expected: d, got: g.dim() });
        }
        min_j = min_j.min(g.len());
    }
    let mut warnings = Vec::new();
    if k + l >= d * min_j {
        warnings.push(format!(
            "over-parameterized: K+L = {} >= d*min(J) = {}",
            k + l,
            d * min_j
        ));
    }

    let mut model = init_model(dataset, k, l, config.seed)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iters {
        let mut stats = SufficientStats::new(d, k, l);
        for group in dataset {
            let moments = model.e_step(group)?;
            stats.accumulate(&moments, group)?;
        }
        model = stats.m_step(config.variance_floor)?;
        let ll = model.marginal_log_likelihood(dataset)?;
        if let Some(&prev) = trace.last() {
            let denom = prev.abs().max(f64::MIN_POSITIVE);
            if (ll - prev) / denom < config.rel_tolerance {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
    }

    Ok(EmFit { model, loglik_trace: trace, converged, warnings })
}

/// Warm start: mu is the data mean, F spans the leading PCA directions of
/// the group means, G those of the within-group residuals; scales ride on
/// the loadings so the latent priors start at one. A seeded jitter breaks
/// degeneracies when the PCA ranks fall short.
fn init_model(dataset: &[IdentityGroup], k: usize, l: usize, seed: u64) -> Result<FactorModel> {
    let d = dataset[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mu = DVector::zeros(d);
    let mut n_total = 0usize;
    for g in dataset {
        for x in &g.observations {
            mu += x;
            n_total += 1;
        }
    }
    mu /= n_total as f64;

    let group_means: Vec<DVector<f64>> = dataset
        .iter()
        .map(|g| {
            let mut m = DVector::zeros(d);
            for x in &g.observations {
                m += x;
            }
            m / g.len() as f64
        })
        .collect();
    let residuals: Vec<DVector<f64>> = dataset
        .iter()
        .zip(&group_means)
        .flat_map(|(g, m)| g.observations.iter().map(move |x| x - m))
        .collect();

    let mut var = DVector::zeros(d);
    for g in dataset {
        for x in &g.observations {
            let r = x - &mu;
            var += r.component_mul(&r);
        }
    }
    var /= (n_total.max(2) - 1) as f64;
    let scale = (var.sum() / d as f64).max(f64::MIN_POSITIVE);

    let f = scaled_pca_loading(&group_means, k, d, scale, &mut rng);
    let g = scaled_pca_loading(&residuals, l, d, scale, &mut rng);

    let floor = 1e-6 * scale;
    let mut sigma = DVector::zeros(d);
    for dim in 0..d {
        let explained: f64 = (0..k).map(|c| f[(dim, c)] * f[(dim, c)]).sum::<f64>()
            + (0..l).map(|c| g[(dim, c)] * g[(dim, c)]).sum::<f64>();
        sigma[dim] = (var[dim] - explained).max(floor);
    }

    FactorModel::new(
        mu,
        f,
        g,
        sigma,
        DVector::from_element(k, 1.0),
        DVector::from_element(l, 1.0),
    )
}

/// Top-`p` eigenvectors of the sample covariance, each scaled by the square
/// root of its eigenvalue. Columns beyond the attainable rank are filled
/// with small random directions.
fn scaled_pca_loading(
    samples: &[DVector<f64>],
    p: usize,
    d: usize,
    data_scale: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d, p);
    if p == 0 {
        return out;
    }
    let attainable = p.min(d.saturating_sub(1)).min(samples.len().saturating_sub(1));
    if attainable > 0 {
        if let Ok(fit) = ppca::fit_pca(samples, attainable) {
            for c in 0..attainable {
                let ev = fit.eigenvalues[c].max(0.0).sqrt();
                out.column_mut(c).copy_from(&(fit.components.column(c) * ev));
            }
        }
    }
    let jitter = 1e-3 * data_scale.sqrt();
    for c in 0..p {
        for r in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out[(r, c)] += jitter * z;
        }
    }
    out
}
