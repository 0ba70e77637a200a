//! Base tests prepared once for a fixed covariance and evaluated on many
//! replicate score vectors at a time.
//!
//! Each base test keeps what its statistic needs as rows of a stacked matrix,
//! so a block of replicates costs one matrix product per test family. Null
//! tails of the quadratic tests come from [`TabulatedTail`].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::acat::{transform_unchecked, CauchyAccumulator};
use crate::base_tests::weighted_eigen;
use crate::dist::{chisq_sf, two_sided_normal_p, MixtureSpec, TabulatedTail};
use crate::ensemble::{ensemble_direction, ensemble_subset, ThetaRule};
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::{SeedSpec, WeightLaw};
use crate::score_model::Covariance;

/// Interpolation nodes for the bank's null tables.
pub(crate) const BANK_NODES: usize = 64;

/// Replicates per matrix product.
pub(crate) const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Family {
    Burden,
    Skat,
    Morst,
}

#[derive(Debug)]
struct Quadratic {
    /// Stacked row blocks of `rank` rows per base test.
    rows: Array2<f64>,
    rank: usize,
    tails: Vec<TabulatedTail>,
}

/// Weighted base tests along a fixed list of directions.
#[derive(Debug)]
pub(crate) struct DirectionBank {
    p: usize,
    size: usize,
    family: Family,
    /// Burden: rows `w_i / sd_i`.
    linear: Option<Array2<f64>>,
    quadratic: Option<Quadratic>,
}

fn mixture(values: Vec<f64>) -> Result<MixtureSpec> {
    MixtureSpec::new(values).map_err(|_| Error::DegenerateDirection(0.0))
}

impl DirectionBank {
    pub(crate) fn new(cov: &Covariance, dirs: &[Array1<f64>], family: Family, theta: ThetaRule) -> Result<Self> {
        let p = cov.dim();
        let size = dirs.len();
        if size == 0 {
            return Err(Error::config("a test bank needs at least one direction"));
        }
        let sigma = cov.matrix();
        match family {
            Family::Burden => {
                let mut rows = Array2::zeros((size, p));
                for (mut row, w) in rows.axis_iter_mut(Axis(0)).zip(dirs) {
                    let sd = cov.direction_variance(w.view())?.sqrt();
                    row.assign(&(w / sd));
                }
                Ok(DirectionBank {
                    p,
                    size,
                    family,
                    linear: Some(rows),
                    quadratic: None,
                })
            }
            Family::Skat => {
                let parts: Vec<(Array1<f64>, TabulatedTail)> = dirs
                    .par_iter()
                    .map(|w| {
                        let (mu, _) = weighted_eigen(sigma, w.view())?;
                        let tail = TabulatedTail::with_nodes(mixture(mu)?, BANK_NODES)?;
                        Ok((w.mapv(|x| x * x), tail))
                    })
                    .collect::<Result<_>>()?;
                let mut rows = Array2::zeros((size, p));
                let mut tails = Vec::with_capacity(size);
                for (i, (w2, tail)) in parts.into_iter().enumerate() {
                    rows.row_mut(i).assign(&w2);
                    tails.push(tail);
                }
                Ok(DirectionBank {
                    p,
                    size,
                    family,
                    linear: None,
                    quadratic: Some(Quadratic { rows, rank: 1, tails }),
                })
            }
            Family::Morst => {
                theta.validate()?;
                let parts: Vec<(Array2<f64>, TabulatedTail)> = dirs
                    .par_iter()
                    .map(|w| {
                        let (mu, u) = weighted_eigen(sigma, w.view())?;
                        let th = theta.theta(&mu);
                        // Row k: u_k' W / sqrt(1 + theta mu_k).
                        let mut a = u.t().to_owned();
                        for (k, mut row) in a.axis_iter_mut(Axis(0)).enumerate() {
                            row *= &w.view();
                            row /= (1.0 + th * mu[k]).sqrt();
                        }
                        let lam = mu.iter().map(|m| m / (1.0 + th * m)).collect();
                        Ok((a, TabulatedTail::with_nodes(mixture(lam)?, BANK_NODES)?))
                    })
                    .collect::<Result<_>>()?;
                let mut rows = Array2::zeros((size * p, p));
                let mut tails = Vec::with_capacity(size);
                for (i, (a, tail)) in parts.into_iter().enumerate() {
                    rows.slice_mut(s![i * p..(i + 1) * p, ..]).assign(&a);
                    tails.push(tail);
                }
                Ok(DirectionBank {
                    p,
                    size,
                    family,
                    linear: None,
                    quadratic: Some(Quadratic { rows, rank: p, tails }),
                })
            }
        }
    }

    /// Bank over the first `size` ensemble directions, identical to those the
    /// in-process ensemble functions draw.
    pub(crate) fn ensemble(
        cov: &Covariance,
        law: &WeightLaw,
        seed: &SeedSpec,
        size: usize,
        family: Family,
        theta: ThetaRule,
    ) -> Result<Self> {
        law.validate(cov.dim())?;
        let dirs = (0..size as u64)
            .into_par_iter()
            .map(|i| ensemble_direction(cov, law, seed, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cov, &dirs, family, theta)
    }

    pub(crate) fn size(&self) -> usize {
        self.size
    }

    /// Base p-values, `size x R`, for the score columns of `scores` (`p x R`).
    pub(crate) fn p_values(&self, scores: ArrayView2<f64>) -> Result<Array2<f64>> {
        assert_eq!(scores.nrows(), self.p, "score block has the wrong dimension");
        match self.family {
            Family::Burden => {
                let t = self.linear.as_ref().expect("burden rows").dot(&scores);
                let mut out = t;
                for x in out.iter_mut() {
                    *x = two_sided_normal_p(*x)?;
                }
                Ok(out)
            }
            Family::Skat | Family::Morst => {
                let q = self.quadratic.as_ref().expect("quadratic rows");
                let stats = if q.rank == 1 {
                    q.rows.dot(&scores.mapv(|x| x * x))
                } else {
                    let proj = q.rows.dot(&scores);
                    let r = scores.ncols();
                    let mut stats = Array2::zeros((self.size, r));
                    for i in 0..self.size {
                        let block = proj.slice(s![i * q.rank..(i + 1) * q.rank, ..]);
                        for (c, col) in block.axis_iter(Axis(1)).enumerate() {
                            stats[[i, c]] = col.dot(&col);
                        }
                    }
                    stats
                };
                let mut out = stats;
                for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                    for x in row.iter_mut() {
                        *x = q.tails[i].sf(x.max(0.0))?;
                    }
                }
                Ok(out)
            }
        }
    }

    /// p-value of base test `i` for one score vector.
    pub(crate) fn base_p_value(&self, i: usize, scores: ArrayView1<f64>) -> Result<f64> {
        let col = scores.insert_axis(Axis(1));
        match self.family {
            Family::Burden => {
                let row = self.linear.as_ref().expect("burden rows").row(i);
                two_sided_normal_p(row.dot(&scores))
            }
            Family::Skat | Family::Morst => {
                let q = self.quadratic.as_ref().expect("quadratic rows");
                let block = q.rows.slice(s![i * q.rank..(i + 1) * q.rank, ..]);
                let stat = if q.rank == 1 {
                    block.row(0).iter().zip(scores).map(|(w2, s)| w2 * s * s).sum()
                } else {
                    let proj = block.dot(&col);
                    proj.iter().map(|x| x * x).sum::<f64>()
                };
                q.tails[i].sf(stat.max(0.0))
            }
        }
    }
}

/// Subset chi-squared base tests on a fixed correlation matrix.
#[derive(Debug)]
pub(crate) struct SubsetBank {
    p: usize,
    df: u32,
    subsets: Vec<Vec<usize>>,
    /// Inverse Cholesky factors of the subset blocks.
    whiteners: Vec<Array2<f64>>,
}

impl SubsetBank {
    pub(crate) fn ensemble(omega: ArrayView2<f64>, s: usize, seed: &SeedSpec, size: usize) -> Result<Self> {
        let parts = (0..size as u64)
            .into_par_iter()
            .map(|i| {
                let (subset, l) = ensemble_subset(omega, s, seed, i)?;
                Ok((subset, linalg::invert_lower(l.view())))
            })
            .collect::<Result<Vec<_>>>()?;
        let (subsets, whiteners) = parts.into_iter().unzip();
        Ok(SubsetBank {
            p: omega.nrows(),
            df: s as u32,
            subsets,
            whiteners,
        })
    }

    pub(crate) fn size(&self) -> usize {
        self.subsets.len()
    }

    pub(crate) fn p_values(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        assert_eq!(z.nrows(), self.p, "score block has the wrong dimension");
        let mut out = Array2::zeros((self.size(), z.ncols()));
        let mut zj = Array1::zeros(self.df as usize);
        for (c, col) in z.axis_iter(Axis(1)).enumerate() {
            for (i, (subset, m)) in self.subsets.iter().zip(&self.whiteners).enumerate() {
                for (k, &j) in subset.iter().enumerate() {
                    zj[k] = col[j];
                }
                let y = m.dot(&zj);
                out[[i, c]] = chisq_sf(y.dot(&y), self.df)?;
            }
        }
        Ok(out)
    }

    pub(crate) fn base_p_value(&self, i: usize, z: ArrayView1<f64>) -> Result<f64> {
        let zj: Array1<f64> = self.subsets[i].iter().map(|&j| z[j]).collect();
        let y = self.whiteners[i].dot(&zj);
        chisq_sf(y.dot(&y), self.df)
    }
}

/// Cauchy combination of the first `b` rows of each column.
pub(crate) fn combine_columns(p: ArrayView2<f64>, b: usize) -> Vec<f64> {
    p.axis_iter(Axis(1))
        .map(|col| {
            let mut acc = CauchyAccumulator::default();
            for &x in col.iter().take(b) {
                acc.push_transformed(transform_unchecked(x));
            }
            acc.combined().p_value
        })
        .collect()
}

/// Check used by tests: the bank agrees with the direct base tests.
#[cfg(test)]
pub(crate) fn direct_p_value(
    cov: &std::sync::Arc<Covariance>,
    family: Family,
    w: ArrayView1<f64>,
    s: ArrayView1<f64>,
    theta: ThetaRule,
) -> Result<f64> {
    let model = crate::score_model::ScoreModel::with_covariance(s.to_vec(), cov.clone(), 100)?;
    Ok(match family {
        Family::Burden => crate::base_tests::burden(&model, w)?.p_value,
        Family::Skat => crate::base_tests::skat(&model, w)?.p_value,
        Family::Morst => {
            let (mu, _) = weighted_eigen(cov.matrix(), w)?;
            crate::base_tests::morst(&model, w, theta.theta(&mu))?.p_value
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{en_burden, en_morst, en_skat, en_subset_chisq, EnsembleConfig};
    use crate::score_model::{exchangeable_sigma, ScoreModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn setup(p: usize, r: usize) -> (Arc<Covariance>, Array2<f64>) {
        let cov = Arc::new(Covariance::new(exchangeable_sigma(p, 0.25).unwrap()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Array2::from_shape_simple_fn((p, r), || rng.sample::<f64, _>(StandardNormal) * 1.7);
        (cov, s)
    }

    #[test]
    fn bank_matches_direct_base_tests() {
        let (cov, scores) = setup(8, 5);
        let seed = SeedSpec::new(4, "bank");
        let law = WeightLaw::UniformPositiveSphere;
        for family in [Family::Burden, Family::Skat, Family::Morst] {
            let bank = DirectionBank::ensemble(&cov, &law, &seed, 6, family, ThetaRule::default()).unwrap();
            let pv = bank.p_values(scores.view()).unwrap();
            for i in 0..6 {
                let w = ensemble_direction(&cov, &law, &seed, i as u64).unwrap();
                for c in 0..5 {
                    let direct = direct_p_value(&cov, family, w.view(), scores.column(c), ThetaRule::default()).unwrap();
                    let rel = ((pv[[i, c]] - direct) / direct).abs();
                    assert!(rel < 1e-5, "{family:?} {i} {c}: {} vs {direct}", pv[[i, c]]);
                    let single = bank.base_p_value(i, scores.column(c)).unwrap();
                    assert!(((pv[[i, c]] - single) / single).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn bank_ensemble_matches_in_process_ensemble() {
        let (cov, scores) = setup(6, 3);
        let cfg = EnsembleConfig::fixed(SeedSpec::new(12, "bank-en"), 40);
        for family in [Family::Burden, Family::Skat, Family::Morst] {
            let bank = DirectionBank::ensemble(&cov, &cfg.law, &cfg.seed, 40, family, ThetaRule::default()).unwrap();
            let combined = combine_columns(bank.p_values(scores.view()).unwrap().view(), 40);
            for c in 0..3 {
                let model = ScoreModel::with_covariance(scores.column(c).to_vec(), cov.clone(), 100).unwrap();
                let direct = match family {
                    Family::Burden => en_burden(&model, &cfg),
                    Family::Skat => en_skat(&model, &cfg),
                    Family::Morst => en_morst(&model, &cfg, ThetaRule::default()),
                }
                .unwrap()
                .p_value;
                assert!(((combined[c] - direct) / direct).abs() < 1e-5, "{family:?}: {} vs {direct}", combined[c]);
            }
        }
        let omega = exchangeable_sigma(6, 0.25).unwrap();
        let sub_cfg = EnsembleConfig { subset_size: Some(2), ..cfg };
        let bank = SubsetBank::ensemble(omega.view(), 2, &sub_cfg.seed, 40).unwrap();
        let combined = combine_columns(bank.p_values(scores.view()).unwrap().view(), 40);
        for c in 0..3 {
            let direct = en_subset_chisq(scores.column(c), omega.view(), &sub_cfg).unwrap().p_value;
            assert!(((combined[c] - direct) / direct).abs() < 1e-12);
        }
    }
}
