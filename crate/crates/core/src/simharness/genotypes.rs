//! Synthetic genotypes: binomial(2, MAF) counts linked across variants by a
//! Gaussian copula.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::sampling::{stream_for, SeedSpec};
use crate::score_model::{ar1_sigma, block_sigma, eigen, exchangeable_sigma};

/// Whole-matrix redraws allowed when some column comes out monomorphic.
const MAX_GENOTYPE_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MafLaw {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl MafLaw {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            MafLaw::Uniform { lo, hi } | MafLaw::LogUniform { lo, hi } => (lo, hi),
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::config(format!("MAF range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 0.5")));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            MafLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
            MafLaw::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * u).exp(),
        }
        .clamp(self.bounds().0, self.bounds().1)
    }
}

/// Correlation of the latent Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Correlation {
    Independent,
    Exchangeable { rho: f64 },
    Autoregressive { rho: f64 },
    Block { sizes: Vec<usize>, rho: f64 },
}

impl Correlation {
    pub fn matrix(&self, p: usize) -> Result<Array2<f64>> {
        let m = match self {
            Correlation::Independent => Ok(Array2::eye(p)),
            Correlation::Exchangeable { rho } => exchangeable_sigma(p, *rho),
            Correlation::Autoregressive { rho } => ar1_sigma(p, *rho),
            Correlation::Block { sizes, rho } => {
                if sizes.iter().sum::<usize>() != p {
                    return Err(Error::config(format!("block sizes {sizes:?} do not sum to p={p}")));
                }
                block_sigma(sizes, *rho)
            }
        };
        m.map_err(|e| match e {
            Error::Domain(msg) => Error::Config(msg),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenotypeSpec {
    pub n: usize,
    pub p: usize,
    pub maf_law: MafLaw,
    pub correlation: Correlation,
}

impl GenotypeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(Error::config(format!("genotypes need n >= 2 and p >= 1, got n={}, p={}", self.n, self.p)));
        }
        self.maf_law.validate()?;
        self.correlation.matrix(self.p).map(|_| ())
    }
}

/// Centered genotype matrix with the MAFs used to draw it.
#[derive(Debug, Clone)]
pub struct Genotypes {
    pub centered: Array2<f64>,
    pub mafs: Vec<f64>,
}

/// `F` with `F F' = C`, from the eigen decomposition so that singular
/// correlations at the edge of the valid range still work.
fn copula_factor(c: &Array2<f64>) -> Result<Array2<f64>> {
    let e = eigen(c.view())?;
    let mut f = e.vectors().to_owned();
    for (mut col, &v) in f.axis_iter_mut(Axis(1)).zip(e.values()) {
        col *= v.sqrt();
    }
    Ok(f)
}

/// Latent Gaussian rows for one attempt.
pub(crate) fn latent(n: usize, factor: &Array2<f64>, seed: &SeedSpec, attempt: u64) -> Array2<f64> {
    let p = factor.nrows();
    let mut rng = stream_for(&seed.child("latent"), attempt);
    let e = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
    e.dot(&factor.t())
}

/// Draws genotypes. If any column is monomorphic the whole matrix is redrawn
/// from the next stream, which keeps the copula intact.
pub fn gen_genotypes(spec: &GenotypeSpec, seed: &SeedSpec) -> Result<Genotypes> {
    spec.validate()?;
    let mut maf_rng = stream_for(&seed.child("maf"), 0);
    let mafs: Vec<f64> = (0..spec.p).map(|_| spec.maf_law.draw(&mut maf_rng)).collect();
    let factor = copula_factor(&spec.correlation.matrix(spec.p)?)?;
    let normal = Normal::standard();
    let cuts: Vec<(f64, f64)> = mafs
        .iter()
        .map(|&m| (normal.inverse_cdf((1.0 - m).powi(2)), normal.inverse_cdf(1.0 - m * m)))
        .collect();

    for attempt in 0..MAX_GENOTYPE_ATTEMPTS {
        let mut g = latent(spec.n, &factor, seed, attempt);
        for mut row in g.axis_iter_mut(Axis(0)) {
            for (x, &(t1, t2)) in row.iter_mut().zip(&cuts) {
                *x = f64::from(u8::from(*x > t1) + u8::from(*x > t2));
            }
        }
        let polymorphic = g
            .axis_iter(Axis(1))
            .all(|col| col.iter().any(|&x| x != col[0]));
        if polymorphic {
            let mean: Array1<f64> = g.mean_axis(Axis(0)).expect("n >= 2");
            g -= &mean;
            return Ok(Genotypes { centered: g, mafs });
        }
    }
    Err(Error::config(format!(
        "{MAX_GENOTYPE_ATTEMPTS} genotype draws all had a monomorphic variant; raise n or the MAF lower bound"
    )))
}

/// Beta density weights `a_j = Beta(MAF_j; c1, c2)`.
pub fn beta_weights(mafs: &[f64], c1: f64, c2: f64) -> Result<Vec<f64>> {
    if !(c1.is_finite() && c1 > 0.0 && c2.is_finite() && c2 > 0.0) {
        return Err(Error::domain(format!("beta_weights: shape parameters ({c1}, {c2}) must be positive")));
    }
    let norm = ln_beta(c1, c2);
    mafs.iter()
        .map(|&m| {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::domain(format!("beta_weights: MAF {m} is not in (0, 1)")));
            }
            Ok(((c1 - 1.0) * m.ln() + (c2 - 1.0) * (-m).ln_1p() - norm).exp())
        })
        .collect()
}
