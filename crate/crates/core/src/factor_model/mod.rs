//! Linear-Gaussian identity-expression factor model.
//!
//! An observation `x` of identity `i` with expression sample `j` is modeled
//! as `x_ij = mu + F w_i + G v_ij + noise`, where `w_i` is shared by every
//! observation of the identity and `v_ij` varies per observation. Both
//! latents carry diagonal Gaussian priors (`lambda`, `rho`) and the noise is
//! diagonal (`sigma`). Training is EM over identity groups; inference is
//! Gaussian conditioning in the latent-sized precision form.

mod em;
mod io;

pub use em::{fit_em, EmConfig, EmFit};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Parameters of the identity-expression model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    mu: DVector<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    sigma: DVector<f64>,
    lambda: DVector<f64>,
    rho: DVector<f64>,
}

/// All observations of a single identity; the unit of E-step inference.
#[derive(Debug, Clone)]
pub struct IdentityGroup {
    pub identity_id: String,
    pub observations: Vec<DVector<f64>>,
}

/// Dense realization of the per-identity stacked system: loading matrix `A`
/// with `F` repeated down the first block-column and `G` on the block
/// diagonal, prior variances `phi = (lambda, rho x J)`, noise `psi = sigma
/// x J` and mean `m = mu x J`.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub a: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub psi: DVector<f64>,
    pub m: DVector<f64>,
}

/// Posterior mean and second moment of the stacked latent `(w, v_1..v_J)`.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub second_moment: DMatrix<f64>,
    k: usize,
    l: usize,
    j: usize,
}

/// Accumulated per-pair moments for the M-step, in the augmented
/// `(w, v, 1)` coordinates.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    d: usize,
    k: usize,
    l: usize,
    /// sum over pairs of `x * E[d~]^T`, d x (K+L+1)
    sum_x_dt: DMatrix<f64>,
    /// sum over pairs of `E[d~ d~^T]`, (K+L+1)^2
    sum_ddt: DMatrix<f64>,
    /// sum over pairs of the elementwise square of `x`
    sum_xx: DVector<f64>,
    n: usize,
}

impl IdentityGroup {
    pub fn new(identity_id: impl Into<String>, observations: Vec<DVector<f64>>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("identity group needs at least one observation"));
        }
        let d = observations[0].len();
        for (i, x) in observations.iter().enumerate() {
            if x.len() != d {
                return Err(Error::DimMismatch {
                    context: "IdentityGroup observation length",
                    expected: d,
                    got: x.len(),
                });
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("IdentityGroup observations"));
            }
            let _ = i;
        }
        Ok(Self { identity_id: identity_id.into(), observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.observations[0].len()
    }
}

fn all_positive(v: &DVector<f64>) -> bool {
    v.iter().all(|&x| x.is_finite() && x > 0.0)
}

impl FactorModel {
    /// Validates shapes and variance positivity. `K` may be zero (pure
    /// expression model); `L = 0` is accepted so that degenerate reductions
    /// of the marginal likelihood remain expressible, but training requires
    /// `L >= 1`.
    pub fn new(
        mu: DVector<f64>,
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        sigma: DVector<f64>,
        lambda: DVector<f64>,
        rho: DVector<f64>,
    ) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::invalid("model dimension d must be >= 1"));
        }
        if f.nrows() != d {
            return Err(Error::DimMismatch { context: "F rows", expected: d, got: f.nrows() });
        }
        if g.nrows() != d {
            return Err(Error::DimMismatch { context: "G rows", expected: d, got: g.nrows() });
        }
        if sigma.len() != d {
            return Err(Error::DimMismatch { context: "sigma length", expected: d, got: sigma.len() });
        }
        if lambda.len() != f.ncols() {
            return Err(Error::DimMismatch {
                context: "lambda length",
                expected: f.ncols(),
                got: lambda.len(),
            });
        }
        if rho.len() != g.ncols() {
            return Err(Error::DimMismatch { context: "rho length", expected: g.ncols(), got: rho.len() });
        }
        if !all_positive(&sigma) || !all_positive(&lambda) || !all_positive(&rho) {
            return Err(Error::invalid("all variance entries must be finite and > 0"));
        }
        if !mu.iter().all(|v| v.is_finite())
            || !f.iter().all(|v| v.is_finite())
            || !g.iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { mu, f, g, sigma, lambda, rho })
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn k(&self) -> usize {
        self.f.ncols()
    }

    pub fn l(&self) -> usize {
        self.g.ncols()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    /// Builds the dense per-identity system of `J` stacked observations.
    pub fn stacked_system(&self, j: usize) -> Result<StackedSystem> {
        if j == 0 {
            return Err(Error::invalid("stacked system requires J >= 1"));
        }
        let (d, k, l) = (self.d(), self.k(), self.l());
        let q = k + j * l;
        let mut a = DMatrix::zeros(j * d, q);
        let mut phi = DVector::zeros(q);
        let mut psi = DVector::zeros(j * d);
        let mut m = DVector::zeros(j * d);
        for block in 0..j {
            a.view_mut((block * d, 0), (d, k)).copy_from(&self.f);
            a.view_mut((block * d, k + block * l), (d, l)).copy_from(&self.g);
            psi.rows_mut(block * d, d).copy_from(&self.sigma);
            m.rows_mut(block * d, d).copy_from(&self.mu);
        }
        phi.rows_mut(0, k).copy_from(&self.lambda);
        for block in 0..j {
            phi.rows_mut(k + block * l, l).copy_from(&self.rho);
        }
        Ok(StackedSystem { a, phi, psi, m })
    }

    fn check_observation(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimMismatch { context: "observation length", expected: self.d(), got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        Ok(())
    }

    /// Assembles the latent-sized precision `Phi^-1 + A^T Psi^-1 A` and the
    /// right-hand side `A^T Psi^-1 (x - m)` without materializing `A`.
    fn posterior_system(&self, xs: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let (k, l) = (self.k(), self.l());
        let j = xs.len();
        let q = k + j * l;
        let sinv = self.sigma.map(|s| 1.0 / s);

        // F^T S^-1 F, F^T S^-1 G, G^T S^-1 G with S the diagonal noise.
        let fs = scale_rows(&self.f, &sinv);
        let gs = scale_rows(&self.g, &sinv);
        let ftf = self.f.transpose() * &fs;
        let ftg = self.f.transpose() * &gs;
        let gtg = self.g.transpose() * &gs;

        let mut prec = DMatrix::zeros(q, q);
        for r in 0..k {
            for c in 0..k {
                prec[(r, c)] = (j as f64) * ftf[(r, c)];
            }
            prec[(r, r)] += 1.0 / self.lambda[r];
        }
        for b in 0..j {
            let off = k + b * l;
            prec.view_mut((0, off), (k, l)).copy_from(&ftg);
            prec.view_mut((off, 0), (l, k)).copy_from(&ftg.transpose());
            let mut diag_block = gtg.clone();
            for ll in 0..l {
                diag_block[(ll, ll)] += 1.0 / self.rho[ll];
            }
            prec.view_mut((off, off), (l, l)).copy_from(&diag_block);
        }

        let mut rhs = DVector::zeros(q);
        for (b, x) in xs.iter().enumerate() {
            let r = x - &self.mu;
            let rw = r.component_mul(&sinv);
            if k > 0 {
                let bw = self.f.transpose() * &rw;
                for i in 0..k {
                    rhs[i] += bw[i];
                }
            }
            if l > 0 {
                let bv = self.g.transpose() * &rw;
                rhs.rows_mut(k + b * l, l).copy_from(&bv);
            }
        }
        (prec, rhs)
    }

    fn posterior_from_system(
        &self,
        prec: DMatrix<f64>,
        rhs: DVector<f64>,
        j: usize,
    ) -> Result<PosteriorMoments> {
        let chol = Cholesky::new(prec.clone()).ok_or_else(|| Error::Singular {
            context: "posterior precision",
            cond: condition_estimate(&prec),
        })?;
        let covariance = chol.inverse();
        let mean = chol.solve(&rhs);
        let second_moment = &covariance + &mean * mean.transpose();
        Ok(PosteriorMoments { mean, covariance, second_moment, k: self.k(), l: self.l(), j })
    }

    /// Joint posterior over `(w, v_1..v_J)` for one identity group.
    pub fn e_step(&self, group: &IdentityGroup) -> Result<PosteriorMoments> {
        for x in &group.observations {
            self.check_observation(x, "e_step input")?;
        }
        let (prec, rhs) = self.posterior_system(&group.observations);
        self.posterior_from_system(prec, rhs, group.len())
    }

    /// Posterior over `(w, v)` for a single observation.
    pub fn infer(&self, x: &DVector<f64>) -> Result<PosteriorMoments> {
        self.check_observation(x, "infer input")?;
        let xs = std::slice::from_ref(x);
        let (prec, rhs) = self.posterior_system(xs);
        self.posterior_from_system(prec, rhs, 1)
    }

    /// Posterior-mean expression weights: the `v`-block of [`Self::infer`].
    pub fn expression_features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let post = self.infer(x)?;
        Ok(post.mean.rows(self.k(), self.l()).into_owned())
    }

    /// Reconstruction with the identity factor zeroed out: `mu + G E[v|x]`.
    pub fn identity_normalize(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.expression_features(x)?;
        Ok(&self.mu + &self.g * v)
    }

    /// `sum_i log N(x_i; m_i, A_i Phi_i A_i^T + Psi_i)` with the covariance
    /// never materialized: determinant and quadratic form go through the
    /// latent-sized precision (Woodbury / matrix determinant lemma).
    pub fn marginal_log_likelihood(&self, dataset: &[IdentityGroup]) -> Result<f64> {
        let mut total = 0.0;
        for group in dataset {
            total += self.group_log_likelihood(group)?;
        }
        Ok(total)
    }

    fn group_log_likelihood(&self, group: &IdentityGroup) -> Result<f64> {
        for x in &group.observations {
            self.check_observation(x, "likelihood input")?;
        }
        let j = group.len();
        let (k, l, d) = (self.k(), self.l(), self.d());
        let q = k + j * l;
        let (prec, rhs) = self.posterior_system(&group.observations);
        let chol = Cholesky::new(prec.clone()).ok_or_else(|| Error::Singular {
            context: "marginal likelihood precision",
            cond: condition_estimate(&prec),
        })?;

        let sinv = self.sigma.map(|s| 1.0 / s);
        let mut quad_direct = 0.0;
        for x in &group.observations {
            let r = x - &self.mu;
            quad_direct += r.component_mul(&sinv).dot(&r);
        }
        let quad = quad_direct - rhs.dot(&chol.solve(&rhs));

        // log|C| = log|P| + log|Phi| + log|Psi|
        let mut logdet = 0.0;
        for i in 0..q {
            logdet += 2.0 * chol.l_dirty()[(i, i)].ln();
        }
        for kk in 0..k {
            logdet += self.lambda[kk].ln();
        }
        for ll in 0..l {
            logdet += (j as f64) * self.rho[ll].ln();
        }
        logdet += (j as f64) * self.sigma.iter().map(|s| s.ln()).sum::<f64>();

        let dim = (j * d) as f64;
        let ll = -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
        if !ll.is_finite() {
            return Err(Error::NonFinite("marginal log-likelihood"));
        }
        Ok(ll)
    }

    /// Quadratic form `r^T (Psi + A Phi A^T)^-1 r` for a length `J*d`
    /// stacked residual, evaluated in the latent-sized precision form.
    pub fn stacked_mahalanobis(&self, j: usize, r: &DVector<f64>) -> Result<f64> {
        if j == 0 {
            return Err(Error::invalid("stacked quadratic form requires J >= 1"));
        }
        if r.len() != j * self.d() {
            return Err(Error::DimMismatch {
                context: "stacked residual length",
                expected: j * self.d(),
                got: r.len(),
            });
        }
        let d = self.d();
        let xs: Vec<DVector<f64>> = (0..j)
            .map(|b| r.rows(b * d, d).into_owned() + &self.mu)
            .collect();
        let (prec, rhs) = self.posterior_system(&xs);
        let chol = Cholesky::new(prec.clone()).ok_or_else(|| Error::Singular {
            context: "stacked quadratic form",
            cond: condition_estimate(&prec),
        })?;
        let sinv = self.sigma.map(|s| 1.0 / s);
        let mut quad = 0.0;
        for b in 0..j {
            let rb = r.rows(b * d, d).into_owned();
            quad += rb.component_mul(&sinv).dot(&rb);
        }
        Ok(quad - rhs.dot(&chol.solve(&rhs)))
    }

    /// Posterior projection of stacked shape-style residuals onto
    /// `(w, v_1..v_J)`: `E[d] = (Phi^-1 + A^T Psi^-1 A)^-1 A^T Psi^-1 r`.
    pub fn project_stacked(&self, j: usize, r: &DVector<f64>) -> Result<DVector<f64>> {
        if j == 0 {
            return Err(Error::invalid("stacked projection requires J >= 1"));
        }
        let d = self.d();
        if r.len() != j * d {
            return Err(Error::DimMismatch {
                context: "stacked residual length",
                expected: j * d,
                got: r.len(),
            });
        }
        let xs: Vec<DVector<f64>> = (0..j)
            .map(|b| r.rows(b * d, d).into_owned() + &self.mu)
            .collect();
        let (prec, rhs) = self.posterior_system(&xs);
        let chol = Cholesky::new(prec.clone()).ok_or_else(|| Error::Singular {
            context: "stacked projection",
            cond: condition_estimate(&prec),
        })?;
        Ok(chol.solve(&rhs))
    }
}

impl PosteriorMoments {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn group_size(&self) -> usize {
        self.j
    }

    /// Shared identity block of the mean.
    pub fn w_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.k).into_owned()
    }

    /// Expression block of the mean for observation `j`.
    pub fn v_mean(&self, j: usize) -> DVector<f64> {
        self.mean.rows(self.k + j * self.l, self.l).into_owned()
    }
}

impl SufficientStats {
    pub fn new(d: usize, k: usize, l: usize) -> Self {
        let q = k + l + 1;
        Self {
            d,
            k,
            l,
            sum_x_dt: DMatrix::zeros(d, q),
            sum_ddt: DMatrix::zeros(q, q),
            sum_xx: DVector::zeros(d),
            n: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum_x_dt(&self) -> &DMatrix<f64> {
        &self.sum_x_dt
    }

    pub fn sum_ddt(&self) -> &DMatrix<f64> {
        &self.sum_ddt
    }

    /// Splits a group posterior into per-pair augmented moments
    /// `E[d~_ij] = (E[w], E[v_j], 1)` and accumulates them. The `w`-`v_j`
    /// cross blocks come from the stacked second moment.
    pub fn accumulate(&mut self, moments: &PosteriorMoments, group: &IdentityGroup) -> Result<()> {
        let (k, l) = (self.k, self.l);
        if moments.k != k || moments.l != l {
            return Err(Error::DimMismatch {
                context: "moments latent dims",
                expected: k + l,
                got: moments.k + moments.l,
            });
        }
        if moments.j != group.len() {
            return Err(Error::DimMismatch {
                context: "moments group size",
                expected: group.len(),
                got: moments.j,
            });
        }
        if group.dim() != self.d {
            return Err(Error::DimMismatch { context: "stats dimension", expected: self.d, got: group.dim() });
        }
        let q = k + l + 1;
        let sm = &moments.second_moment;
        for (j, x) in group.observations.iter().enumerate() {
            let off = k + j * l;
            let mut ed = DVector::zeros(q);
            ed.rows_mut(0, k).copy_from(&moments.mean.rows(0, k));
            ed.rows_mut(k, l).copy_from(&moments.mean.rows(off, l));
            ed[q - 1] = 1.0;

            let mut eddt = DMatrix::zeros(q, q);
            eddt.view_mut((0, 0), (k, k)).copy_from(&sm.view((0, 0), (k, k)));
            eddt.view_mut((0, k), (k, l)).copy_from(&sm.view((0, off), (k, l)));
            eddt.view_mut((k, 0), (l, k)).copy_from(&sm.view((off, 0), (l, k)));
            eddt.view_mut((k, k), (l, l)).copy_from(&sm.view((off, off), (l, l)));
            eddt.view_mut((0, q - 1), (q - 1, 1)).copy_from(&ed.rows(0, q - 1));
            eddt.view_mut((q - 1, 0), (1, q - 1)).copy_from(&ed.rows(0, q - 1).transpose());
            eddt[(q - 1, q - 1)] = 1.0;

            self.sum_x_dt += x * ed.transpose();
            self.sum_ddt += eddt;
            self.sum_xx += x.component_mul(x);
            self.n += 1;
        }
        Ok(())
    }

    /// Associative merge so E-steps can run concurrently and combine.
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if (self.d, self.k, self.l) != (other.d, other.k, other.l) {
            return Err(Error::DimMismatch {
                context: "stats merge dims",
                expected: self.d + self.k + self.l,
                got: other.d + other.k + other.l,
            });
        }
        self.sum_x_dt += &other.sum_x_dt;
        self.sum_ddt += &other.sum_ddt;
        self.sum_xx += &other.sum_xx;
        self.n += other.n;
        Ok(())
    }

    /// Closed-form M-step. `floor_scale` is the relative variance floor
    /// (applied as `floor_scale * mean(E[x^2])`).
    pub fn m_step(&self, floor_scale: f64) -> Result<FactorModel> {
        if self.n == 0 {
            return Err(Error::invalid("m_step needs at least one accumulated pair"));
        }
        let (d, k, l) = (self.d, self.k, self.l);
        let q = k + l + 1;
        let n = self.n as f64;

        // Rank deficiency is expected when n < K+L+1; ridge keeps the solve defined.
        let ridge = 1e-9 * self.sum_ddt.trace();
        let mut normal = self.sum_ddt.clone();
        for i in 0..q {
            normal[(i, i)] += ridge;
        }
        let chol = Cholesky::new(normal.clone()).ok_or_else(|| Error::Singular {
            context: "m_step normal equations",
            cond: condition_estimate(&normal),
        })?;
        // B~ = (sum x d~^T)(sum d~ d~^T)^-1, solved row-wise.
        let b_t = chol.solve(&self.sum_x_dt.transpose());
        let b = b_t.transpose();

        let f = b.columns(0, k).into_owned();
        let g = b.columns(k, l).into_owned();
        let mu = b.column(q - 1).into_owned();

        let floor = floor_scale * (self.sum_xx.sum() / (n * d as f64)).max(f64::MIN_POSITIVE);

        // Sigma = (1/N) diag{ B sum_ddt B^T + sum xx^T - 2 sum x d~^T B^T }
        let bs = &b * &self.sum_ddt;
        let mut sigma = DVector::zeros(d);
        for row in 0..d {
            let quad = bs.row(row).dot(&b.row(row));
            let cross = self.sum_x_dt.row(row).dot(&b.row(row));
            sigma[row] = ((quad + self.sum_xx[row] - 2.0 * cross) / n).max(floor);
        }

        // Phi~ diagonal, augmented slot discarded.
        let mut lambda = DVector::zeros(k);
        for kk in 0..k {
            lambda[kk] = (self.sum_ddt[(kk, kk)] / n).max(floor);
        }
        let mut rho = DVector::zeros(l);
        for ll in 0..l {
            rho[ll] = (self.sum_ddt[(k + ll, k + ll)] / n).max(floor);
        }

        FactorModel::new(mu, f, g, sigma, lambda, rho)
    }
}

/// Multiplies each row of `m` by the matching entry of `w`.
fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

/// Eigenvalue-ratio condition estimate for error reports.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max).abs();
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min).abs();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests;
