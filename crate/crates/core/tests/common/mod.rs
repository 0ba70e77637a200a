#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Upper 0.001 point of the Kolmogorov distribution.
pub const KS_CRITICAL_1E3: f64 = 1.94947;

/// `sqrt(n) * sup |F_n - F|`.
pub fn ks_scaled(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d * n.sqrt()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random correlation matrix `D^{-1/2} (A A' + 0.2 I) D^{-1/2}`.
pub fn random_correlation(p: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((p, p), |_| rng.sample::<f64, _>(StandardNormal));
    let mut m = a.dot(&a.t()) + Array2::<f64>::eye(p) * (0.2 * p as f64);
    let d: Vec<f64> = (0..p).map(|i| m[[i, i]].sqrt()).collect();
    for ((i, j), x) in m.indexed_iter_mut() {
        *x /= d[i] * d[j];
    }
    m
}

/// Draws from `N(0, L L')`.
pub fn gaussian(l: &Array2<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let e = Array1::from_shape_fn(l.nrows(), |_| rng.sample::<f64, _>(StandardNormal));
    l.dot(&e)
}
