//! Ensembles of randomized base tests combined by the Cauchy rule, with an
//! adaptive controller for the number of base tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acat::CauchyAccumulator;
use crate::base_tests::{self, default_theta};
use crate::dist::{mixture_sf, two_sided_normal_p};
use crate::error::{Error, Result};
use crate::sampling::{draw_subset, fill_positive_direction, stream_for, SeedSpec, WeightLaw};
use crate::score_model::{Covariance, ScoreModel};

/// Attempts at drawing a usable direction or subset for one base test.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub seed: SeedSpec,
    pub b_max: usize,
    /// Base tests evaluated between two looks at the p-value path.
    pub block: usize,
    /// No stable or futility stop before this many base tests.
    pub min_b: usize,
    /// Largest `|delta log10 p_en|` between the last three path entries that
    /// still counts as stable.
    pub stability_tol: f64,
    pub futility_margin: f64,
    pub supersig_margin: f64,
    /// Enables the futility and super-significance stops.
    pub target_alpha: Option<f64>,
    /// When false every run goes to `b_max`.
    pub adaptive: bool,
    pub law: WeightLaw,
    pub subset_size: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            seed: SeedSpec::new(0, "ensemble"),
            b_max: 1000,
            block: 100,
            min_b: 300,
            stability_tol: 0.05,
            futility_margin: 100.0,
            supersig_margin: 1e-3,
            target_alpha: None,
            adaptive: true,
            law: WeightLaw::UniformPositiveSphere,
            subset_size: None,
        }
    }
}

impl EnsembleConfig {
    /// A non-adaptive run of exactly `b` base tests.
    pub fn fixed(seed: SeedSpec, b: usize) -> Self {
        EnsembleConfig {
            seed,
            b_max: b,
            adaptive: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_max == 0 || self.block == 0 || self.min_b == 0 {
            return Err(Error::config("b_max, block and min_b must be positive"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.stability_tol) || !positive(self.futility_margin) || !positive(self.supersig_margin) {
            return Err(Error::config("stability_tol and both margins must be positive"));
        }
        if let Some(a) = self.target_alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config(format!("target_alpha={a} must lie in (0, 1)")));
            }
        }
        if self.subset_size == Some(0) {
            return Err(Error::config("subset_size must be positive"));
        }
        Ok(())
    }

    /// `min_b`, capped at `b_max`.
    fn effective_min_b(&self) -> usize {
        self.min_b.min(self.b_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "stable")]
    Stable,
    #[serde(rename = "futility")]
    Futility,
    #[serde(rename = "super-significant")]
    SuperSignificant,
    #[serde(rename = "B_max")]
    BMax,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stable => "stable",
            StopReason::Futility => "futility",
            StopReason::SuperSignificant => "super-significant",
            StopReason::BMax => "B_max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    pub statistic: f64,
    #[serde(rename = "B_used")]
    pub b_used: usize,
    pub stop_reason: StopReason,
    /// `(B, p_en)` at each block boundary.
    pub path: Vec<(usize, f64)>,
    /// Every base p-value in index order.
    #[serde(skip)]
    pub base_p_values: Vec<f64>,
}

/// Runs base tests `0, 1, 2, ...` in blocks until a stopping rule fires.
///
/// After each block the ensemble p-value of everything evaluated so far is
/// appended to the path and the rules are checked in this order:
/// super-significance (`p_en < supersig_margin * target_alpha`), futility
/// (`p_en > futility_margin * target_alpha` once `min_b` is reached),
/// stability (the last three path entries within `stability_tol` on the
/// log10 scale, once `min_b` is reached) and finally `b_max`.
pub fn run_adaptive<F>(base_p: F, cfg: &EnsembleConfig) -> Result<TestResult>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let min_b = cfg.effective_min_b();
    let mut acc = CauchyAccumulator::default();
    let mut ps = Vec::new();
    let mut path: Vec<(usize, f64)> = Vec::new();
    let mut stop = StopReason::BMax;
    while ps.len() < cfg.b_max {
        let start = ps.len();
        let end = (start + cfg.block).min(cfg.b_max);
        let block: Vec<f64> = (start..end)
            .into_par_iter()
            .map(|i| base_p(i as u64))
            .collect::<Result<_>>()?;
        for &p in &block {
            acc.push(p)?;
        }
        ps.extend(block);
        let p_en = acc.combined().p_value;
        path.push((ps.len(), p_en));
        if !cfg.adaptive {
            continue;
        }
        let b = ps.len();
        if let Some(alpha) = cfg.target_alpha {
            if p_en < cfg.supersig_margin * alpha {
                stop = StopReason::SuperSignificant;
                break;
            }
            if b >= min_b && p_en > cfg.futility_margin * alpha {
                stop = StopReason::Futility;
                break;
            }
        }
        if b >= min_b && path.len() >= 3 {
            let tail = &path[path.len() - 3..];
            let steady = tail
                .windows(2)
                .all(|w| (w[1].1.log10() - w[0].1.log10()).abs() <= cfg.stability_tol);
            if steady {
                stop = StopReason::Stable;
                break;
            }
        }
    }
    let combined = acc.combined();
    Ok(TestResult {
        p_value: combined.p_value,
        statistic: combined.statistic,
        b_used: ps.len(),
        stop_reason: stop,
        path,
        base_p_values: ps,
    })
}

/// The direction used by base test `i`: the first draw from its stream with
/// `w' Sigma w` clear of zero.
pub fn ensemble_direction(cov: &Covariance, law: &WeightLaw, seed: &SeedSpec, i: u64) -> Result<Array1<f64>> {
    let p = cov.dim();
    let mut rng = stream_for(seed, i);
    let mut w = vec![0.0; p];
    for _ in 0..MAX_RESAMPLES {
        fill_positive_direction(&mut rng, law, &mut w)?;
        match cov.direction_variance(ArrayView1::from(&w)) {
            Ok(_) => return Ok(Array1::from(w)),
            Err(Error::DegenerateDirection(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::numerical(
        "ensemble_direction",
        format!("{MAX_RESAMPLES} consecutive degenerate directions for base test {i}"),
    ))
}

fn check_config(model: &ScoreModel, cfg: &EnsembleConfig) -> Result<()> {
    cfg.validate()?;
    cfg.law.validate(model.dim())
}

/// Ensemble of linear tests along random positive directions.
pub fn en_burden(model: &ScoreModel, cfg: &EnsembleConfig) -> Result<TestResult> {
    check_config(model, cfg)?;
    let cov = model.covariance();
    run_adaptive(
        |i| {
            let w = ensemble_direction(cov, &cfg.law, &cfg.seed, i)?;
            let var = cov.direction_variance(w.view())?;
            two_sided_normal_p(w.dot(&model.scores()) / var.sqrt())
        },
        cfg,
    )
}

/// Ensemble of SKAT tests with random diagonal weights.
pub fn en_skat(model: &ScoreModel, cfg: &EnsembleConfig) -> Result<TestResult> {
    check_config(model, cfg)?;
    let cov = model.covariance();
    run_adaptive(
        |i| {
            let w = ensemble_direction(cov, &cfg.law, &cfg.seed, i)?;
            Ok(base_tests::skat(model, w.view())?.p_value)
        },
        cfg,
    )
}

/// How MORST's ridge parameter is chosen for each base test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThetaRule {
    /// The same `theta` for every base test.
    Fixed { theta: f64 },
    /// `1 / mean(mu)` for the eigenvalues `mu` of `W Sigma W`.
    #[default]
    ReciprocalMeanEigen,
}

impl ThetaRule {
    pub fn theta(&self, mu: &[f64]) -> f64 {
        match *self {
            ThetaRule::Fixed { theta } => theta,
            ThetaRule::ReciprocalMeanEigen => default_theta(mu),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThetaRule::Fixed { theta } if !(theta.is_finite() && theta >= 0.0) => {
                Err(Error::config(format!("theta={theta} must be finite and nonnegative")))
            }
            _ => Ok(()),
        }
    }
}

/// Ensemble of MORST tests with random diagonal weights.
pub fn en_morst(model: &ScoreModel, cfg: &EnsembleConfig, rule: ThetaRule) -> Result<TestResult> {
    check_config(model, cfg)?;
    rule.validate()?;
    let cov = model.covariance();
    run_adaptive(
        |i| {
            let w = ensemble_direction(cov, &cfg.law, &cfg.seed, i)?;
            let (stat, null) = base_tests::morst_parts(model.sigma(), model.scores(), w.view(), |mu| rule.theta(mu))?;
            Ok(mixture_sf(stat, &null)?.value)
        },
        cfg,
    )
}

/// Subset size: the configured one or `floor(sqrt(p))`.
pub fn subset_size(p: usize, cfg: &EnsembleConfig) -> Result<usize> {
    let s = cfg.subset_size.unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1));
    if s == 0 || s > p {
        return Err(Error::config(format!("subset size {s} must lie in 1..={p}")));
    }
    Ok(s)
}

/// The index subset used by base test `i` and the Cholesky factor of its
/// correlation block.
pub fn ensemble_subset(
    omega: ArrayView2<f64>,
    s: usize,
    seed: &SeedSpec,
    i: u64,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let mut rng = stream_for(seed, i);
    for _ in 0..MAX_RESAMPLES {
        let subset = draw_subset(&mut rng, omega.nrows(), s);
        match base_tests::subset_factor(omega, &subset) {
            Ok(l) => return Ok((subset, l)),
            Err(Error::DegenerateSubset(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::data(format!(
        "{MAX_RESAMPLES} consecutive ill-conditioned subsets for base test {i}"
    )))
}

/// Ensemble of chi-squared tests on random index subsets.
pub fn en_subset_chisq(z: ArrayView1<f64>, omega: ArrayView2<f64>, cfg: &EnsembleConfig) -> Result<TestResult> {
    cfg.validate()?;
    base_tests::check_z_omega(z, omega)?;
    let s = subset_size(z.len(), cfg)?;
    run_adaptive(
        |i| {
            let (subset, l) = ensemble_subset(omega, s, &cfg.seed, i)?;
            let stat = base_tests::subset_statistic(l.view(), z, &subset);
            crate::dist::chisq_sf(stat, s as u32)
        },
        cfg,
    )
}
