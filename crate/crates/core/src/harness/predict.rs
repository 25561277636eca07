//! Downstream predictors: closed-form ridge regression and one-vs-all
//! regularized logistic classification.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor_model::condition_estimate;

/// Affine multi-output linear map `y = W x + b`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl LinearMap {
    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.intercept
    }
}

/// Closed-form ridge regression with an unpenalized intercept; `reg = 0`
/// is ordinary least squares when the normal equations are well posed.
pub fn ridge_regress(
    features: &[DVector<f64>],
    targets: &[DVector<f64>],
    reg: f64,
) -> Result<LinearMap> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::invalid("ridge regression needs matching nonempty features/targets"));
    }
    if reg < 0.0 {
        return Err(Error::invalid("ridge penalty must be >= 0"));
    }
    let n = features.len();
    let f_dim = features[0].len();
    let t_dim = targets[0].len();
    for x in features {
        if x.len() != f_dim {
            return Err(Error::DimMismatch { context: "ridge feature length", expected: f_dim, got: x.len() });
        }
    }
    for y in targets {
        if y.len() != t_dim {
            return Err(Error::DimMismatch { context: "ridge target length", expected: t_dim, got: y.len() });
        }
    }

    let mut x_mean = DVector::zeros(f_dim);
    let mut y_mean = DVector::zeros(t_dim);
    for (x, y) in features.iter().zip(targets) {
        x_mean += x;
        y_mean += y;
    }
    x_mean /= n as f64;
    y_mean /= n as f64;

    let mut xtx = DMatrix::zeros(f_dim, f_dim);
    let mut xty = DMatrix::zeros(f_dim, t_dim);
    for (x, y) in features.iter().zip(targets) {
        let xc = x - &x_mean;
        let yc = y - &y_mean;
        xtx += &xc * xc.transpose();
        xty += &xc * yc.transpose();
    }
    for i in 0..f_dim {
        xtx[(i, i)] += reg;
    }
    let chol = Cholesky::new(xtx.clone()).ok_or_else(|| Error::Singular {
        context: "ridge normal equations",
        cond: condition_estimate(&xtx),
    })?;
    let weights = chol.solve(&xty).transpose();
    let intercept = &y_mean - &weights * &x_mean;
    Ok(LinearMap { weights, intercept })
}

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub reg: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { reg: 1e-4, max_iters: 50, tol: 1e-8 }
    }
}

/// One-vs-all linear scorer; the multiclass decision takes the maximum
/// per-class score (ties break toward the lexicographically first class).
#[derive(Debug, Clone)]
pub struct OneVsAllClassifier {
    pub classes: Vec<String>,
    weights: Vec<DVector<f64>>,
    biases: Vec<f64>,
}

impl OneVsAllClassifier {
    pub fn scores(&self, x: &DVector<f64>) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.dot(x) + b)
            .collect()
    }

    pub fn predict(&self, x: &DVector<f64>) -> &str {
        let scores = self.scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        &self.classes[best]
    }
}

/// Newton-iterated L2-regularized logistic regression per class.
pub fn linear_classify(
    features: &[DVector<f64>],
    labels: &[String],
    config: &ClassifyConfig,
) -> Result<OneVsAllClassifier> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid("classification needs matching nonempty features/labels"));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("classification needs at least two classes"));
    }
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for class in &classes {
        let y: Vec<f64> = labels.iter().map(|l| if l == class { 1.0 } else { 0.0 }).collect();
        let (w, b) = fit_logistic(features, &y, config)?;
        weights.push(w);
        biases.push(b);
    }
    Ok(OneVsAllClassifier { classes, weights, biases })
}

fn fit_logistic(xs: &[DVector<f64>], y: &[f64], config: &ClassifyConfig) -> Result<(DVector<f64>, f64)> {
    let dim = xs[0].len();
    // Augmented form: last slot is the (unregularized) bias.
    let mut w = DVector::zeros(dim + 1);
    for _ in 0..config.max_iters {
        let mut grad = DVector::zeros(dim + 1);
        let mut hess = DMatrix::zeros(dim + 1, dim + 1);
        for (x, &target) in xs.iter().zip(y) {
            let z = w.rows(0, dim).dot(x) + w[dim];
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - target;
            let s = (p * (1.0 - p)).max(1e-9);
            for i in 0..dim {
                grad[i] += err * x[i];
                for jj in 0..dim {
                    hess[(i, jj)] += s * x[i] * x[jj];
                }
                hess[(i, dim)] += s * x[i];
                hess[(dim, i)] += s * x[i];
            }
            grad[dim] += err;
            hess[(dim, dim)] += s;
        }
        for i in 0..dim {
            grad[i] += config.reg * w[i];
            hess[(i, i)] += config.reg;
        }
        hess[(dim, dim)] += 1e-12;
        let chol = Cholesky::new(hess.clone()).ok_or_else(|| Error::Singular {
            context: "logistic Newton step",
            cond: condition_estimate(&hess),
        })?;
        let step = chol.solve(&grad);
        w -= &step;
        if step.amax() < config.tol {
            break;
        }
    }
    let bias = w[dim];
    Ok((w.rows(0, dim).into_owned(), bias))
}
