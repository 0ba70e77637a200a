//! The Gaussian score model `S ~ N_p(sqrt(n) Sigma beta, Sigma)`, its
//! construction from regression data, and the power geometry of linear tests.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{ChiSquared, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative asymmetry tolerated in a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues down to `-NEGATIVE_EIGEN_TOL * lambda_max` are clamped
/// to zero; anything more negative is rejected.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
/// `w' Sigma w` below this multiple of `lambda_max` makes a direction
/// degenerate.
pub const DEGENERATE_DIRECTION_TOL: f64 = 1e-12;

/// Eigen-decomposition `Sigma = U diag(values) U'` with clamped, nonincreasing
/// eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: Array2<f64>,
}

impl EigenSystem {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Orthonormal eigenvectors as columns.
    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// `Lambda^{1/2} U' w`.
    pub fn transform(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.vectors.t().dot(&w);
        for (o, l) in out.iter_mut().zip(&self.values) {
            *o *= l.sqrt();
        }
        out
    }
}

/// Eigensystem of a symmetric positive-semidefinite matrix.
pub fn eigen(sigma: ArrayView2<f64>) -> Result<EigenSystem> {
    linalg::check_symmetric(sigma, SYMMETRY_TOL)?;
    let (mut values, vectors) = linalg::symmetric_eigen(sigma)?;
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_EIGEN_TOL * top {
                return Err(Error::data(format!(
                    "covariance is not positive semidefinite: eigenvalue {v:e} with largest {top:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// A validated covariance matrix with its eigensystem, shared between every
/// model that uses it.
#[derive(Debug, Clone)]
pub struct Covariance {
    sigma: Array2<f64>,
    eigen: EigenSystem,
}

impl Covariance {
    pub fn new(sigma: Array2<f64>) -> Result<Self> {
        let eigen = eigen(sigma.view())?;
        if !(eigen.largest() > 0.0) {
            return Err(Error::data("covariance matrix is zero"));
        }
        Ok(Covariance { sigma, eigen })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    pub fn eigen(&self) -> &EigenSystem {
        &self.eigen
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen.largest()
    }

    /// `w' Sigma w`, failing when it is negligible relative to `lambda_max`.
    pub fn direction_variance(&self, w: ArrayView1<f64>) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(Error::domain(format!(
                "direction has length {}, expected {}",
                w.len(),
                self.dim()
            )));
        }
        let v = linalg::quad_form(self.sigma.view(), w);
        let norm2 = w.dot(&w);
        if !(v > DEGENERATE_DIRECTION_TOL * self.lambda_max() * norm2) {
            return Err(Error::DegenerateDirection(v));
        }
        Ok(v)
    }
}

/// Marginal score statistics `S`, their covariance and the sample size.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    s: Array1<f64>,
    cov: Arc<Covariance>,
    n: u64,
}

impl ScoreModel {
    pub fn new(s: Vec<f64>, sigma: Array2<f64>, n: u64) -> Result<Self> {
        Self::with_covariance(s, Arc::new(Covariance::new(sigma)?), n)
    }

    /// Reuses an already validated covariance.
    pub fn with_covariance(s: Vec<f64>, cov: Arc<Covariance>, n: u64) -> Result<Self> {
        if s.len() != cov.dim() {
            return Err(Error::data(format!(
                "score vector has length {}, covariance is {}x{}",
                s.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        if let Some(bad) = s.iter().find(|x| !x.is_finite()) {
            return Err(Error::data(format!("score vector has non-finite entry {bad}")));
        }
        if n == 0 {
            return Err(Error::data("sample size must be positive"));
        }
        Ok(ScoreModel {
            s: Array1::from(s),
            cov,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn scores(&self) -> ArrayView1<'_, f64> {
        self.s.view()
    }

    pub fn sigma(&self) -> ArrayView2<'_, f64> {
        self.cov.matrix()
    }

    pub fn covariance(&self) -> &Arc<Covariance> {
        &self.cov
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Standardized scores `Z_j = S_j / sqrt(Sigma_jj)` and the correlation
    /// matrix `Omega`.
    pub fn standardized(&self) -> (Array1<f64>, Array2<f64>) {
        let sigma = self.sigma();
        let inv_sd = sigma.diag().mapv(|v| v.sqrt().recip());
        let z = &self.scores() * &inv_sd;
        let p = self.dim();
        let omega = Array2::from_shape_fn((p, p), |(i, j)| sigma[[i, j]] * inv_sd[i] * inv_sd[j]);
        (z, omega)
    }

    pub fn lambda_max(&self) -> f64 {
        self.cov.lambda_max()
    }
}

/// True coefficients, with strength `||beta||` and direction `beta / ||beta||`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    beta: Array1<f64>,
    strength: f64,
}

impl SignalSpec {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("signal has non-finite coefficients"));
        }
        let beta = Array1::from(beta);
        let strength = beta.dot(&beta).sqrt();
        Ok(SignalSpec { beta, strength })
    }

    /// `strength * direction`; the direction is normalized here.
    pub fn from_direction(direction: &[f64], strength: f64) -> Result<Self> {
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !(strength >= 0.0) {
            return Err(Error::domain("signal needs a nonzero direction and nonnegative strength"));
        }
        Self::new(direction.iter().map(|x| x / norm * strength).collect())
    }

    pub fn beta(&self) -> ArrayView1<'_, f64> {
        self.beta.view()
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// `None` under the null.
    pub fn direction(&self) -> Option<Array1<f64>> {
        (self.strength > 0.0).then(|| &self.beta / self.strength)
    }
}

/// `w' S / sqrt(w' Sigma w)`, standard normal under the null.
pub fn linear_stat(model: &ScoreModel, w: ArrayView1<f64>) -> Result<f64> {
    let v = model.cov.direction_variance(w)?;
    Ok(w.dot(&model.s) / v.sqrt())
}

/// Mean of [`linear_stat`] under `signal`:
/// `sqrt(n) ||beta|| (w' Sigma w_beta) / sqrt(w' Sigma w)`.
pub fn linear_noncentrality(cov: &Covariance, n: u64, w: ArrayView1<f64>, signal: &SignalSpec) -> Result<f64> {
    let v = cov.direction_variance(w)?;
    let shift = w.dot(&cov.matrix().dot(&signal.beta));
    Ok((n as f64).sqrt() * shift / v.sqrt())
}

/// `cos^2` of the angle between `Lambda^{1/2} U' w` and
/// `Lambda^{1/2} U' w_beta`: the efficiency of the linear test along `w`
/// relative to the one along the true direction.
pub fn relative_efficiency(cov: &Covariance, w: ArrayView1<f64>, w_beta: ArrayView1<f64>) -> Result<f64> {
    for v in [w, w_beta] {
        if v.len() != cov.dim() {
            return Err(Error::domain("relative_efficiency: dimension mismatch"));
        }
    }
    let a = cov.eigen().transform(w);
    let b = cov.eigen().transform(w_beta);
    let (aa, bb) = (a.dot(&a), b.dot(&b));
    let tol = DEGENERATE_DIRECTION_TOL * cov.lambda_max();
    if !(aa > tol * w.dot(&w)) {
        return Err(Error::DegenerateDirection(aa));
    }
    if !(bb > tol * w_beta.dot(&w_beta)) {
        return Err(Error::DegenerateDirection(bb));
    }
    let c = a.dot(&b);
    Ok((c * c / (aa * bb)).min(1.0))
}

/// Cosine of the transformed angle between `1_p / sqrt(p)` and `w_beta` under
/// an exchangeable correlation `rho`, in closed form.
pub fn exchangeable_burden_cosine(rho: f64, w_beta: &[f64]) -> Result<f64> {
    let p = w_beta.len();
    check_exchangeable(p, rho)?;
    let norm = w_beta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::DegenerateDirection(0.0));
    }
    let c = w_beta.iter().sum::<f64>() / (norm * (p as f64).sqrt());
    let l1 = 1.0 + (p as f64 - 1.0) * rho;
    let l2 = 1.0 - rho;
    let rest = (1.0 - c * c).max(0.0);
    let denom = (c * c + l2 / l1 * rest).sqrt();
    if !(l1 > 0.0) || denom == 0.0 {
        return Err(Error::DegenerateDirection(l1));
    }
    Ok(c / denom)
}

fn check_exchangeable(p: usize, rho: f64) -> Result<()> {
    if p == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    let lo = if p > 1 { -1.0 / (p as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !(rho >= lo && rho <= 1.0) {
        return Err(Error::domain(format!("exchangeable rho={rho} outside [{lo}, 1] for p={p}")));
    }
    Ok(())
}

/// Unit diagonal and constant off-diagonal `rho`.
pub fn exchangeable_sigma(p: usize, rho: f64) -> Result<Array2<f64>> {
    check_exchangeable(p, rho)?;
    Ok(Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { rho }))
}

/// `Sigma_ij = rho^|i-j|`.
pub fn ar1_sigma(p: usize, rho: f64) -> Result<Array2<f64>> {
    if p == 0 || !(rho.abs() < 1.0) {
        return Err(Error::domain(format!("autoregressive rho={rho} must lie in (-1, 1)")));
    }
    Ok(Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32)))
}

/// Block-diagonal with exchangeable blocks of the given sizes.
pub fn block_sigma(sizes: &[usize], rho: f64) -> Result<Array2<f64>> {
    let p: usize = sizes.iter().sum();
    if p == 0 || sizes.contains(&0) {
        return Err(Error::domain("block sizes must be positive"));
    }
    let mut out = Array2::zeros((p, p));
    let mut at = 0;
    for &b in sizes {
        let block = exchangeable_sigma(b, rho)?;
        out.slice_mut(s![at..at + b, at..at + b]).assign(&block);
        at += b;
    }
    Ok(out)
}

/// Orthonormal basis of the column span of `[1, Z]` by modified Gram-Schmidt.
fn covariate_basis(n: usize, z: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
    let q = z.map_or(0, |z| z.ncols());
    let mut basis = Array2::zeros((n, q + 1));
    basis.column_mut(0).fill(1.0 / (n as f64).sqrt());
    for k in 0..q {
        let col = z.unwrap().column(k).to_owned();
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::data(format!("covariate column {k} has non-finite entries")));
        }
        let norm0 = col.dot(&col).sqrt();
        let mut v = col;
        for _ in 0..2 {
            for j in 0..=k {
                let b = basis.column(j);
                let c = b.dot(&v);
                v.scaled_add(-c, &b);
            }
        }
        let norm = v.dot(&v).sqrt();
        if !(norm > 1e-10 * norm0.max(f64::MIN_POSITIVE)) || norm0 == 0.0 {
            return Err(Error::config(format!(
                "covariate column {k} is collinear with the intercept and earlier covariates"
            )));
        }
        basis.column_mut(k + 1).assign(&(v / norm));
    }
    Ok(basis)
}

fn residualize(basis: ArrayView2<f64>, x: &mut Array2<f64>) {
    // Twice, for the same reason as in the basis construction.
    for _ in 0..2 {
        let coef = basis.t().dot(&*x);
        *x -= &basis.dot(&coef);
    }
}

fn check_regression_shapes(y: ArrayView1<f64>, g: ArrayView2<f64>, z: Option<ArrayView2<f64>>) -> Result<()> {
    let n = g.nrows();
    if y.len() != n {
        return Err(Error::data(format!("response has {} rows, genotypes {n}", y.len())));
    }
    if let Some(z) = z {
        if z.nrows() != n {
            return Err(Error::data(format!("covariates have {} rows, genotypes {n}", z.nrows())));
        }
    }
    let q = z.map_or(0, |z| z.ncols());
    if n <= q + 1 {
        return Err(Error::config(format!("need more than {} samples, got {n}", q + 1)));
    }
    if g.ncols() == 0 {
        return Err(Error::data("no variants"));
    }
    if g.iter().chain(y.iter()).any(|x| !x.is_finite()) {
        return Err(Error::data("non-finite response or genotype value"));
    }
    Ok(())
}

/// Residualizes `G` on `[1, Z]` and checks that no column vanishes.
fn residual_design(g: ArrayView2<f64>, basis: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut gt = g.to_owned();
    residualize(basis, &mut gt);
    for (j, col) in gt.axis_iter(Axis(1)).enumerate() {
        let orig = g.column(j);
        let scale = orig.dot(&orig).sqrt().max(f64::MIN_POSITIVE);
        if !(col.dot(&col).sqrt() > 1e-10 * scale) {
            return Err(Error::data(format!("variant column {j} is constant after covariate adjustment")));
        }
    }
    Ok(gt)
}

/// Score model of a linear regression of `y` on the columns of `g`, adjusting
/// for an intercept and the covariates `z`.
///
/// `S = G~' Y~ / (sigma_hat sqrt(n))` and `Sigma = G~' G~ / n`, where `~`
/// denotes residuals on `[1, Z]` and `sigma_hat^2 = ||Y~||^2 / (n - q - 1)`.
pub fn from_regression(y: ArrayView1<f64>, g: ArrayView2<f64>, z: Option<ArrayView2<f64>>) -> Result<ScoreModel> {
    check_regression_shapes(y, g, z)?;
    let n = g.nrows();
    let q = z.map_or(0, |z| z.ncols());
    let basis = covariate_basis(n, z)?;
    let gt = residual_design(g, basis.view())?;
    let mut yt = y.to_owned().insert_axis(Axis(1));
    residualize(basis.view(), &mut yt);
    let yt = yt.remove_axis(Axis(1));
    let sigma2 = yt.dot(&yt) / (n - q - 1) as f64;
    if !(yt.dot(&yt).sqrt() > 1e-12 * y.dot(&y).sqrt()) {
        return Err(Error::data("residual variance of the response is zero"));
    }
    let nf = n as f64;
    let s = gt.t().dot(&yt) / (sigma2.sqrt() * nf.sqrt());
    let mut sigma = gt.t().dot(&gt) / nf;
    symmetrize(&mut sigma);
    ScoreModel::new(s.to_vec(), sigma, n as u64)
}

fn symmetrize(a: &mut Array2<f64>) {
    let p = a.nrows();
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Fixed genotypes and covariates with Gaussian errors, reduced to the
/// sufficient quantities of [`from_regression`].
///
/// With `G~ = Q R` (thin QR), the residualized errors split into
/// `g = Q' e ~ N(0, I_p)` and an independent remainder with squared norm
/// `chi^2(n - q - 1 - p)`. Then `G~' Y~ = n Sigma beta + R' g` and
/// `||Y~||^2 = ||R beta + g||^2 + chi^2`, so a replicate costs `O(p^2)`
/// instead of `O(n p)` while producing exactly the same statistic.
#[derive(Debug, Clone)]
pub struct FixedDesign {
    n: usize,
    q: usize,
    basis: Array2<f64>,
    q_factor: Array2<f64>,
    r: Array2<f64>,
    cov: Arc<Covariance>,
    remainder: ChiSquared<f64>,
}

impl FixedDesign {
    pub fn new(g: ArrayView2<f64>, z: Option<ArrayView2<f64>>) -> Result<Self> {
        let n = g.nrows();
        let p = g.ncols();
        let q = z.map_or(0, |z| z.ncols());
        check_regression_shapes(Array1::zeros(n).view(), g, z)?;
        if n <= q + 1 + p {
            return Err(Error::config(format!(
                "fixed design needs more than {} samples, got {n}",
                q + 1 + p
            )));
        }
        let basis = covariate_basis(n, z)?;
        let gt = residual_design(g, basis.view())?;
        let mut sigma = gt.t().dot(&gt) / n as f64;
        symmetrize(&mut sigma);
        let cov = Arc::new(Covariance::new(sigma)?);
        let l = linalg::cholesky(cov.matrix())
            .map_err(|_| Error::data("variant columns are linearly dependent after covariate adjustment"))?;
        let r = l.t().to_owned() * (n as f64).sqrt();
        let r_inv_t = linalg::invert_lower(l.view()) / (n as f64).sqrt();
        let q_factor = gt.dot(&r_inv_t.t());
        let remainder = ChiSquared::new((n - q - 1 - p) as f64)
            .map_err(|e| Error::numerical("FixedDesign", e.to_string()))?;
        Ok(FixedDesign {
            n,
            q,
            basis,
            q_factor,
            r,
            cov,
            remainder,
        })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn covariance(&self) -> &Arc<Covariance> {
        &self.cov
    }

    /// Splits an error vector into the sufficient parts `(Q' e~, ||e~||^2 - ||Q' e~||^2)`.
    pub fn decompose(&self, eps: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let mut e = eps.to_owned().insert_axis(Axis(1));
        residualize(self.basis.view(), &mut e);
        let e = e.remove_axis(Axis(1));
        let g = self.q_factor.t().dot(&e);
        let rest = (e.dot(&e) - g.dot(&g)).max(0.0);
        (g, rest)
    }

    /// Score vector for coefficients `beta` given the sufficient error parts.
    pub fn scores_from_parts(&self, beta: ArrayView1<f64>, g: ArrayView1<f64>, rest: f64) -> Array1<f64> {
        let fitted = self.r.dot(&beta) + g;
        let sigma2 = (fitted.dot(&fitted) + rest) / (self.n - self.q - 1) as f64;
        self.r.t().dot(&fitted) / (sigma2.sqrt() * (self.n as f64).sqrt())
    }

    /// Draws the sufficient error parts `(g, rest)` of one replicate.
    pub fn sample_parts<R: Rng + ?Sized>(&self, rng: &mut R) -> (Array1<f64>, f64) {
        let g: Array1<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let rest = rng.sample(self.remainder);
        (g, rest)
    }

    /// Draws one replicate's score vector.
    pub fn sample_scores<R: Rng + ?Sized>(&self, beta: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        let (g, rest) = self.sample_parts(rng);
        self.scores_from_parts(beta, g.view(), rest)
    }

    pub fn model(&self, s: Array1<f64>) -> Result<ScoreModel> {
        ScoreModel::with_covariance(s.to_vec(), Arc::clone(&self.cov), self.n as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn exchangeable_eigenvalues() {
        let e = eigen(exchangeable_sigma(50, 0.2).unwrap().view()).unwrap();
        assert!(close(e.values()[0], 10.8, 1e-12));
        assert!(e.values()[1..].iter().all(|&v| close(v, 0.8, 1e-12)));
        let top = e.vectors().column(0).to_owned();
        assert!(top.iter().all(|x| close(x.abs(), 50f64.sqrt().recip(), 1e-10)));

        let e = eigen(exchangeable_sigma(50, -0.018).unwrap().view()).unwrap();
        assert!(close(*e.values().last().unwrap(), 0.118, 1e-12));
        assert!(e.values()[..49].iter().all(|&v| close(v, 1.018, 1e-12)));

        assert_eq!(exchangeable_sigma(3, 0.0).unwrap(), Array2::<f64>::eye(3));
        assert!(exchangeable_sigma(50, -0.03).is_err());
        assert!(exchangeable_sigma(50, 1.1).is_err());
    }

    #[test]
    fn eigen_clamps_and_rejects() {
        let e = eigen(Array2::<f64>::eye(4).view()).unwrap();
        assert_eq!(e.values(), &[1.0; 4]);
        let tiny = array![[1.0, 1.0], [1.0, 1.0 - 1e-13]];
        let e = eigen(tiny.view()).unwrap();
        assert!(e.values()[1] >= 0.0);
        assert!(matches!(eigen(array![[1.0, 2.0], [2.0, 1.0]].view()), Err(Error::Data(_))));
        assert!(matches!(eigen(array![[1.0, 0.1], [0.2, 1.0]].view()), Err(Error::Domain(_))));
    }

    #[test]
    fn linear_stat_examples() {
        let m = ScoreModel::new(vec![1.0; 9], Array2::eye(9), 100).unwrap();
        let w = Array1::from_elem(9, 1.0 / 3.0);
        assert!(close(linear_stat(&m, w.view()).unwrap(), 3.0, 1e-14));

        let m = ScoreModel::new(vec![2.5], array![[4.0]], 10).unwrap();
        assert!(close(linear_stat(&m, array![1.0].view()).unwrap(), 1.25, 1e-15));

        let m = ScoreModel::new(vec![1.0; 50], exchangeable_sigma(50, 0.2).unwrap(), 100).unwrap();
        let w = Array1::from_elem(50, 50f64.sqrt().recip());
        assert!(close(linear_stat(&m, w.view()).unwrap(), (50.0f64 / 10.8).sqrt(), 1e-12));
    }

    #[test]
    fn degenerate_direction() {
        let sigma = array![[1.0, 0.0], [0.0, 0.0]];
        let m = ScoreModel::new(vec![1.0, 1.0], sigma, 10).unwrap();
        assert!(matches!(linear_stat(&m, array![0.0, 1.0].view()), Err(Error::DegenerateDirection(_))));
    }

    #[test]
    fn efficiency_examples() {
        let cov = Covariance::new(Array2::eye(3)).unwrap();
        let w = array![1.0, 0.0, 0.0];
        let wb = array![0.6, 0.8, 0.0];
        assert!(close(relative_efficiency(&cov, w.view(), wb.view()).unwrap(), 0.36, 1e-14));
        assert!(close(relative_efficiency(&cov, wb.view(), wb.view()).unwrap(), 1.0, 1e-14));
    }

    #[test]
    fn exchangeable_closed_form_matches_eigen_route() {
        use crate::sampling::{sample_positive_direction, SeedSpec, WeightLaw};
        let seed = SeedSpec::new(3, "efficiency");
        for (k, rho) in [0.2, 0.0, -0.01, -0.018, 0.6].into_iter().enumerate() {
            let cov = Covariance::new(exchangeable_sigma(50, rho).unwrap()).unwrap();
            let ones = Array1::from_elem(50, 50f64.sqrt().recip());
            for i in 0..20 {
                let wb = sample_positive_direction(50, &WeightLaw::UniformPositiveSphere, &seed, (k * 100 + i) as u64).unwrap();
                let eff = relative_efficiency(&cov, ones.view(), ArrayView1::from(&wb)).unwrap();
                let c = exchangeable_burden_cosine(rho, &wb).unwrap();
                assert!((eff - c * c).abs() < 1e-10, "rho={rho} eff={eff} closed={}", c * c);
            }
        }
    }

    #[test]
    fn efficiency_matches_direct_quadratic_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((15, 10), |_| rng.random::<f64>() - 0.5);
        let sigma = x.t().dot(&x);
        let cov = Covariance::new(sigma.clone()).unwrap();
        for _ in 0..20 {
            let w = Array1::from_shape_fn(10, |_| rng.random::<f64>());
            let wb = Array1::from_shape_fn(10, |_| rng.random::<f64>());
            let direct = w.dot(&sigma.dot(&wb)).powi(2) / (w.dot(&sigma.dot(&w)) * wb.dot(&sigma.dot(&wb)));
            assert!((relative_efficiency(&cov, w.view(), wb.view()).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_builders() {
        let a = ar1_sigma(4, 0.5).unwrap();
        assert_eq!(a[[0, 3]], 0.125);
        assert!(ar1_sigma(4, 1.0).is_err());
        let b = block_sigma(&[2, 3], 0.4).unwrap();
        assert_eq!(b[[0, 1]], 0.4);
        assert_eq!(b[[1, 2]], 0.0);
        assert_eq!(b[[3, 4]], 0.4);
        assert!(block_sigma(&[2, 0], 0.1).is_err());
    }

    fn design(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, p), |_| (rng.random::<f64>() * 3.0).floor());
        let z = Array2::from_shape_fn((n, 2), |(_, j)| {
            if j == 0 {
                rng.sample::<f64, _>(StandardNormal)
            } else if rng.random::<bool>() {
                0.5
            } else {
                -0.5
            }
        });
        (g, z)
    }

    #[test]
    fn orthonormal_design_gives_identity() {
        // Centered orthogonal columns scaled to norm sqrt(n).
        let n = 8;
        let h = [
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [-1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, -1.0, -1.0],
        ];
        let g = Array2::from_shape_fn((n, 3), |(i, j)| h[i][j]);
        let y = Array1::from_shape_fn(n, |i| i as f64 * 0.3 - (i % 3) as f64);
        let m = from_regression(y.view(), g.view(), None).unwrap();
        let dev = &m.sigma() - &Array2::<f64>::eye(3);
        assert!(dev.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn regression_errors() {
        let (g, z) = design(30, 3, 1);
        let y = Array1::from_elem(30, 1.0);
        assert!(matches!(from_regression(y.view(), g.view(), Some(z.view())), Err(Error::Data(_))));
        let mut zz = Array2::zeros((30, 2));
        zz.column_mut(0).assign(&z.column(0));
        zz.column_mut(1).assign(&(&z.column(0) * 2.0));
        let y = z.column(0).to_owned();
        assert!(matches!(from_regression(y.view(), g.view(), Some(zz.view())), Err(Error::Config(_))));
        let mut gc = g.clone();
        gc.column_mut(1).fill(1.0);
        assert!(matches!(from_regression(y.view(), gc.view(), None), Err(Error::Data(_))));
        assert!(matches!(
            from_regression(y.slice(s![..3]), g.slice(s![..3, ..]), Some(z.slice(s![..3, ..]))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_design_matches_direct_regression() {
        let (g, z) = design(200, 6, 5);
        let fd = FixedDesign::new(g.view(), Some(z.view())).unwrap();
        let beta = array![0.1, 0.0, -0.2, 0.05, 0.0, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let eps = Array1::from_shape_fn(200, |_| rng.sample::<f64, _>(StandardNormal));
            let y = g.dot(&beta) + &z.column(0) * 0.5 + &z.column(1) * 0.5 + &eps;
            let direct = from_regression(y.view(), g.view(), Some(z.view())).unwrap();
            let (parts, rest) = fd.decompose(eps.view());
            let fast = fd.scores_from_parts(beta.view(), parts.view(), rest);
            for (a, b) in fast.iter().zip(direct.scores()) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
            }
            let dev = &direct.sigma() - &fd.covariance().matrix();
            assert!(dev.iter().all(|x| x.abs() < 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn linear_stat_is_scale_invariant(
            s in prop::collection::vec(-5.0f64..5.0, 6),
            w in prop::collection::vec(0.01f64..1.0, 6),
            c in 1e-3f64..1e3,
        ) {
            let m = ScoreModel::new(s, ar1_sigma(6, 0.4).unwrap(), 50).unwrap();
            let w = Array1::from(w);
            let a = linear_stat(&m, w.view()).unwrap();
            let b = linear_stat(&m, (&w * c).view()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn efficiency_is_symmetric_and_bounded(
            w in prop::collection::vec(0.0f64..1.0, 5),
            wb in prop::collection::vec(0.0f64..1.0, 5),
            rho in -0.2f64..0.9,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.1 && wb.iter().sum::<f64>() > 0.1);
            let cov = Covariance::new(exchangeable_sigma(5, rho).unwrap()).unwrap();
            let (w, wb) = (Array1::from(w), Array1::from(wb));
            let a = relative_efficiency(&cov, w.view(), wb.view()).unwrap();
            let b = relative_efficiency(&cov, wb.view(), w.view()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
