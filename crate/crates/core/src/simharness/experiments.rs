//! Experiment runners.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::bank::{combine_columns, DirectionBank, Family, SubsetBank, CHUNK};
use super::genotypes::{beta_weights, gen_genotypes};
use super::output::*;
use super::*;
use crate::dist::{chisq_sf, normal_sf};
use crate::ensemble::{run_adaptive, subset_size, EnsembleConfig};
use crate::linalg;
use crate::reference_tests::{CalibrationTable, SparseTest};
use crate::sampling::{draw_subset, fill_positive_direction, stream_for, SeedSpec, Stream, WeightLaw};
use crate::score_model::{Covariance, FixedDesign};

/// Draws an effect vector: the support, magnitudes and signs follow
/// `effect`, scaled by `strength`. `count` overrides the support size of a
/// sparse effect.
pub fn effect_vector(
    effect: &EffectSpec,
    p: usize,
    strength: f64,
    count: Option<usize>,
    mafs: Option<&[f64]>,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    match *effect {
        EffectSpec::UniformDirection => {
            let mut w = vec![0.0; p];
            fill_positive_direction(rng, &WeightLaw::UniformPositiveSphere, &mut w)?;
            Ok(w.into_iter().map(|x| x * strength).collect())
        }
        EffectSpec::Sparse {
            proportion,
            count: fixed,
            magnitude,
            signs,
        } => {
            let m = count
                .or(fixed)
                .or_else(|| proportion.map(|f| (f * p as f64).round() as usize))
                .unwrap_or(p);
            if m == 0 || m > p {
                return Err(Error::config(format!("effect support size {m} must lie in 1..={p}")));
            }
            let mut beta = vec![0.0; p];
            for j in draw_subset(rng, p, m) {
                let size = match magnitude {
                    Magnitude::Constant => strength,
                    Magnitude::LogMaf => {
                        let mafs = mafs.ok_or_else(|| Error::config("log-maf effects need MAFs"))?;
                        strength * mafs[j].log10().abs()
                    }
                };
                let negative = signs == SignLaw::Random && rng.random::<bool>();
                beta[j] = if negative { -size } else { size };
            }
            Ok(beta)
        }
    }
}

enum Source {
    /// `S = F g + sqrt(n) Sigma beta` with `F F' = Sigma`.
    Gaussian { factor: Array2<f64>, n: f64 },
    Regression { design: FixedDesign },
}

/// The data-generating side of an experiment.
struct Scenario {
    p: usize,
    source: Source,
    mafs: Option<Vec<f64>>,
    cov: Arc<Covariance>,
    omega: Array2<f64>,
    inv_sd: Array1<f64>,
}

/// One point of a power grid.
#[derive(Debug, Clone, Copy)]
struct Point {
    n: Option<f64>,
    strength: f64,
    count: Option<usize>,
}

enum Signal<'a> {
    Null,
    Drawn(&'a EffectSpec, Point),
    Fixed(&'a Array1<f64>),
}

impl Scenario {
    fn build(spec: &ExperimentSpec) -> Result<Self> {
        let (source, mafs, cov) = match &spec.model {
            ModelSpec::Gaussian { p, correlation, n } => {
                let cov = Arc::new(Covariance::new(correlation.matrix(*p)?)?);
                let e = cov.eigen();
                let mut factor = e.vectors().to_owned();
                for (mut col, &v) in factor.axis_iter_mut(Axis(1)).zip(e.values()) {
                    col *= v.sqrt();
                }
                (Source::Gaussian { factor, n: *n }, None, cov)
            }
            ModelSpec::Regression { genotypes, covariates } => {
                let seed = SeedSpec::new(spec.seed, "genotypes");
                let geno = gen_genotypes(genotypes, &seed)?;
                let z = covariates.then(|| {
                    let mut rng = stream_for(&SeedSpec::new(spec.seed, "covariates"), 0);
                    Array2::from_shape_fn((genotypes.n, 2), |(_, c)| {
                        if c == 0 {
                            rng.sample(StandardNormal)
                        } else if rng.random::<bool>() {
                            0.5
                        } else {
                            -0.5
                        }
                    })
                });
                let design = FixedDesign::new(geno.centered.view(), z.as_ref().map(|z| z.view()))?;
                let cov = design.covariance().clone();
                (Source::Regression { design }, Some(geno.mafs), cov)
            }
        };
        let p = cov.dim();
        let sigma = cov.matrix();
        let inv_sd: Array1<f64> = sigma.diag().mapv(|v| v.sqrt().recip());
        let omega = Array2::from_shape_fn((p, p), |(i, j)| sigma[[i, j]] * inv_sd[i] * inv_sd[j]);
        Ok(Scenario {
            p,
            source,
            mafs,
            cov,
            omega,
            inv_sd,
        })
    }

    fn beta(&self, signal: &Signal, rng: &mut Stream) -> Result<Option<Array1<f64>>> {
        Ok(match signal {
            Signal::Null => None,
            Signal::Drawn(effect, point) => Some(Array1::from(effect_vector(
                effect,
                self.p,
                point.strength,
                point.count,
                self.mafs.as_deref(),
                rng,
            )?)),
            Signal::Fixed(beta) => Some((*beta).clone()),
        })
    }

    /// Score vector of replicate `r`: the noise is drawn first, then the
    /// effect, so the noise is shared across grid points.
    fn replicate(&self, signal: &Signal, seed: &SeedSpec, r: u64) -> Result<Array1<f64>> {
        let mut rng = stream_for(seed, r);
        match &self.source {
            Source::Gaussian { factor, n } => {
                let g: Array1<f64> = (0..self.p).map(|_| rng.sample(StandardNormal)).collect();
                let mut s = factor.dot(&g);
                if let Some(beta) = self.beta(signal, &mut rng)? {
                    let n = match signal {
                        Signal::Drawn(_, point) => point.n.unwrap_or(*n),
                        _ => *n,
                    };
                    s.scaled_add(n.sqrt(), &self.cov.matrix().dot(&beta));
                }
                Ok(s)
            }
            Source::Regression { design } => {
                let (g, rest) = design.sample_parts(&mut rng);
                let beta = self.beta(signal, &mut rng)?.unwrap_or_else(|| Array1::zeros(self.p));
                Ok(design.scores_from_parts(beta.view(), g.view(), rest))
            }
        }
    }
}

enum Prepared {
    Direction { bank: DirectionBank, ensemble: bool },
    Subset(SubsetBank),
    Sparse(CalibrationTable),
    Chisq { whitener: Array2<f64> },
}

struct PreparedTest {
    label: String,
    prepared: Prepared,
}

impl PreparedTest {
    fn build(spec: &ExperimentSpec, scenario: &Scenario, t: &TestSpec) -> Result<Self> {
        let p = scenario.p;
        let aux = match t.weights {
            WeightSpec::Flat => None,
            WeightSpec::Beta { c1, c2 } => {
                let mafs = scenario.mafs.as_deref().ok_or_else(|| Error::config("beta weights need MAFs"))?;
                Some(beta_weights(mafs, c1, c2)?)
            }
        };
        let ens_seed = SeedSpec::new(spec.seed, "ensemble");
        let theta = spec.ensemble.theta;
        let family = |k: TestKind| match k {
            TestKind::EnBurden | TestKind::Burden => Family::Burden,
            TestKind::EnSkat | TestKind::Skat => Family::Skat,
            _ => Family::Morst,
        };
        let prepared = match t.test {
            TestKind::EnBurden | TestKind::EnSkat | TestKind::EnMorst => {
                let law = match aux {
                    None => WeightLaw::UniformPositiveSphere,
                    Some(aux) => WeightLaw::AuxiliaryWeightedSphere { aux },
                };
                let bank = DirectionBank::ensemble(&scenario.cov, &law, &ens_seed, spec.ensemble.b, family(t.test), theta)?;
                Prepared::Direction { bank, ensemble: true }
            }
            TestKind::Burden | TestKind::Skat | TestKind::Morst => {
                let a = Array1::from(aux.unwrap_or_else(|| vec![1.0; p]));
                let w = &a / a.dot(&a).sqrt();
                let bank = DirectionBank::new(&scenario.cov, &[w], family(t.test), theta)?;
                Prepared::Direction { bank, ensemble: false }
            }
            TestKind::EnSubsetChisq => {
                let cfg = EnsembleConfig {
                    subset_size: spec.ensemble.subset_size,
                    ..Default::default()
                };
                let s = subset_size(p, &cfg)?;
                let seed = ens_seed.child("subsets");
                Prepared::Subset(SubsetBank::ensemble(scenario.omega.view(), s, &seed, spec.ensemble.b)?)
            }
            TestKind::Hc | TestKind::Bj => {
                let test = if t.test == TestKind::Hc {
                    SparseTest::HigherCriticism
                } else {
                    SparseTest::BerkJones
                };
                Prepared::Sparse(CalibrationTable::build(test, p, spec.reference_draws, spec.seed)?)
            }
            TestKind::Chisq => {
                let l = linalg::cholesky(scenario.omega.view())
                    .map_err(|_| Error::config("chisq needs a nonsingular correlation matrix"))?;
                Prepared::Chisq {
                    whitener: linalg::invert_lower(l.view()),
                }
            }
        };
        Ok(PreparedTest {
            label: t.label(),
            prepared,
        })
    }

    /// p-values for the score columns `s` and their standardized form `z`.
    fn p_values(&self, s: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        match &self.prepared {
            Prepared::Direction { bank, ensemble } => {
                let pv = bank.p_values(s)?;
                Ok(if *ensemble {
                    combine_columns(pv.view(), bank.size())
                } else {
                    pv.row(0).to_vec()
                })
            }
            Prepared::Subset(bank) => Ok(combine_columns(bank.p_values(z)?.view(), bank.size())),
            Prepared::Sparse(table) => z
                .axis_iter(Axis(1))
                .map(|col| Ok(table.p_value(table.test().statistic(col)?)))
                .collect(),
            Prepared::Chisq { whitener } => {
                let y = whitener.dot(&z);
                y.axis_iter(Axis(1))
                    .map(|col| chisq_sf(col.dot(&col), col.len() as u32))
                    .collect()
            }
        }
    }
}

/// p-values of every test for replicates `0..reps`, indexed `[test][replicate]`.
fn simulate(
    scenario: &Scenario,
    tests: &[&PreparedTest],
    signal: &Signal,
    seed: &SeedSpec,
    reps: usize,
) -> Result<Vec<Vec<f64>>> {
    let chunks = reps.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = reps.min(lo + CHUNK);
            let mut s = Array2::zeros((scenario.p, hi - lo));
            for r in lo..hi {
                s.column_mut(r - lo).assign(&scenario.replicate(signal, seed, r as u64)?);
            }
            let z = &s * &scenario.inv_sd.view().insert_axis(Axis(1));
            tests.iter().map(|t| t.p_values(s.view(), z.view())).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::with_capacity(reps); tests.len()];
    for part in parts {
        for (dst, src) in out.iter_mut().zip(part) {
            dst.extend(src);
        }
    }
    Ok(out)
}

fn rate(ps: &[f64], threshold: f64) -> (f64, f64) {
    let k = ps.iter().filter(|&&p| p <= threshold).count();
    let n = ps.len() as f64;
    let r = k as f64 / n;
    (r, (r * (1.0 - r) / n).sqrt())
}

fn replicate_seed(spec: &ExperimentSpec) -> SeedSpec {
    SeedSpec::new(spec.seed, "replicates")
}

fn prepare(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<(Scenario, Vec<PreparedTest>)> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::config(format!("expected a {kind:?} experiment, got {:?}", spec.kind)));
    }
    let scenario = Scenario::build(spec)?;
    let tests = spec
        .tests
        .iter()
        .map(|t| PreparedTest::build(spec, &scenario, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((scenario, tests))
}

fn metadata(spec: &ExperimentSpec, start: Instant, max_mc_se: f64) -> Metadata {
    Metadata {
        spec_hash: spec.hash(),
        seed: spec.seed,
        kind: format!("{:?}", spec.kind).to_lowercase(),
        replications: spec.replications,
        wall_time_secs: start.elapsed().as_secs_f64(),
        max_mc_se,
        tuned: Vec::new(),
        critical_values: Vec::new(),
    }
}

fn max_se(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

/// Empirical type-I error of every test at every level, without early
/// stopping.
pub fn run_type1(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let (scenario, tests) = prepare(spec, ExperimentKind::Type1)?;
    let refs: Vec<&PreparedTest> = tests.iter().collect();
    let ps = simulate(&scenario, &refs, &Signal::Null, &replicate_seed(spec), spec.replications)?;
    let mut rows = Vec::new();
    for (t, p) in tests.iter().zip(&ps) {
        for &alpha in &spec.alphas {
            let (r, se) = rate(p, alpha);
            rows.push(Type1Row {
                test: t.label.clone(),
                alpha,
                rate: r,
                se,
                replications: spec.replications,
            });
        }
    }
    let meta = metadata(spec, start, max_se(rows.iter().map(|r| r.se)));
    Ok(ExperimentOutput {
        table: ExperimentTable::Type1(rows),
        metadata: meta,
    })
}

/// Rejection thresholds per test and level: Monte Carlo null quantiles where
/// calibration applies, the nominal level elsewhere.
fn critical_values(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    tests: &[PreparedTest],
) -> Result<(Vec<Vec<f64>>, Vec<CriticalValue>)> {
    let mut thresholds = vec![spec.alphas.clone(); tests.len()];
    let mut records = Vec::new();
    if let Some(cal) = &spec.calibration {
        if spec.alphas.iter().any(|&a| a >= cal.min_alpha) {
            let refs: Vec<&PreparedTest> = tests.iter().collect();
            let seed = SeedSpec::new(spec.seed, "null");
            let null = simulate(scenario, &refs, &Signal::Null, &seed, cal.replications)?;
            for (ti, mut ps) in null.into_iter().enumerate() {
                ps.sort_by(f64::total_cmp);
                for (ai, &alpha) in spec.alphas.iter().enumerate() {
                    if alpha < cal.min_alpha {
                        continue;
                    }
                    let k = (alpha * ps.len() as f64).floor() as usize;
                    let c = ps[k.max(1) - 1];
                    thresholds[ti][ai] = c;
                    records.push(CriticalValue {
                        test: tests[ti].label.clone(),
                        alpha,
                        critical: c,
                        null_replications: cal.replications,
                    });
                }
            }
        }
    }
    Ok((thresholds, records))
}

/// Power of every test over the grid.
pub fn run_power(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let (scenario, tests) = prepare(spec, ExperimentKind::Power)?;
    let effect = spec.effect.as_ref().expect("validated");
    let grid = spec.grid.as_ref().expect("validated");
    let (thresholds, records) = critical_values(spec, &scenario, &tests)?;
    let seed = replicate_seed(spec);

    let base_point = |v: f64| Point {
        n: (grid.axis == GridAxis::SampleSize).then_some(v),
        strength: grid.strength.unwrap_or(0.0),
        count: (grid.axis == GridAxis::Signals).then_some(v as usize),
    };
    let tuner = spec.tune.as_ref().map(|t| {
        let idx = tests.iter().position(|x| x.label == t.test).expect("validated");
        let threshold = spec
            .alphas
            .iter()
            .position(|&a| a == t.alpha)
            .map(|ai| thresholds[idx][ai])
            .filter(|_| spec.calibration.as_ref().is_some_and(|c| t.alpha >= c.min_alpha))
            .unwrap_or(t.alpha);
        (t, idx, threshold)
    });
    let tune_at = |point: Point| -> Result<(f64, f64)> {
        let (t, idx, threshold) = tuner.as_ref().expect("tuning configured");
        let reps = t.replications.unwrap_or(spec.replications);
        let power = |strength: f64| -> Result<f64> {
            let pt = Point { strength, ..point };
            let ps = simulate(&scenario, &[&tests[*idx]], &Signal::Drawn(effect, pt), &seed, reps)?;
            Ok(rate(&ps[0], *threshold).0)
        };
        let (mut lo, mut hi) = (t.lo, t.hi);
        for _ in 0..t.iterations {
            let mid = 0.5 * (lo + hi);
            if power(mid)? < t.target_power {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let strength = 0.5 * (lo + hi);
        Ok((strength, power(strength)?))
    };

    let mut tuned = Vec::new();
    let mut points = Vec::new();
    if grid.axis == GridAxis::Strength {
        let scale = if tuner.is_some() {
            let (s, achieved) = tune_at(base_point(0.0))?;
            tuned.push(TunedStrength {
                grid_value: None,
                strength: s,
                achieved_power: achieved,
            });
            s
        } else {
            1.0
        };
        for &v in &grid.values {
            points.push((v, Point { strength: v * scale, ..base_point(v) }));
        }
    } else {
        for &v in &grid.values {
            let mut point = base_point(v);
            if tuner.is_some() {
                let (s, achieved) = tune_at(point)?;
                tuned.push(TunedStrength {
                    grid_value: Some(v),
                    strength: s,
                    achieved_power: achieved,
                });
                point.strength = s;
            }
            points.push((v, point));
        }
    }

    let axis = match grid.axis {
        GridAxis::SampleSize => "sample-size",
        GridAxis::Strength => "strength",
        GridAxis::Signals => "signals",
    };
    let refs: Vec<&PreparedTest> = tests.iter().collect();
    let mut rows = Vec::new();
    for (v, point) in points {
        let ps = simulate(&scenario, &refs, &Signal::Drawn(effect, point), &seed, spec.replications)?;
        for (ti, p) in ps.iter().enumerate() {
            for (ai, &alpha) in spec.alphas.iter().enumerate() {
                let critical = thresholds[ti][ai];
                let (power, se) = rate(p, critical);
                rows.push(PowerRow {
                    axis: axis.to_string(),
                    value: v,
                    strength: point.strength,
                    test: tests[ti].label.clone(),
                    alpha,
                    power,
                    se,
                    critical,
                });
            }
        }
    }
    let mut meta = metadata(spec, start, max_se(rows.iter().map(|r| r.se)));
    meta.tuned = tuned;
    meta.critical_values = records;
    Ok(ExperimentOutput {
        table: ExperimentTable::Power(rows),
        metadata: meta,
    })
}

/// The ensemble p-value path of every replicate, under the effect at
/// `grid.strength` when one is given and under the null otherwise.
pub fn run_path(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let (scenario, tests) = prepare(spec, ExperimentKind::Path)?;
    let e = &spec.ensemble;
    let cfg = EnsembleConfig {
        seed: SeedSpec::new(spec.seed, "ensemble"),
        b_max: e.b,
        block: e.block,
        min_b: e.min_b,
        stability_tol: e.stability_tol,
        futility_margin: e.futility_margin,
        supersig_margin: e.supersig_margin,
        target_alpha: e.target_alpha,
        adaptive: e.adaptive,
        ..Default::default()
    };
    cfg.validate()?;
    let strength = spec.grid.as_ref().and_then(|g| g.strength);
    let signal = match (&spec.effect, strength) {
        (Some(effect), Some(strength)) => Signal::Drawn(
            effect,
            Point {
                n: None,
                strength,
                count: None,
            },
        ),
        _ => Signal::Null,
    };
    let seed = replicate_seed(spec);
    let per_replicate = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let s = scenario.replicate(&signal, &seed, r as u64)?;
            let z = &s * &scenario.inv_sd;
            let mut rows = Vec::new();
            for t in &tests {
                let result = match &t.prepared {
                    Prepared::Direction { bank, .. } => run_adaptive(|i| bank.base_p_value(i as usize, s.view()), &cfg)?,
                    Prepared::Subset(bank) => run_adaptive(|i| bank.base_p_value(i as usize, z.view()), &cfg)?,
                    _ => unreachable!("validated: ensemble tests only"),
                };
                for &(b, p) in &result.path {
                    rows.push(PathRow {
                        replicate: r,
                        test: t.label.clone(),
                        b,
                        p_value: p,
                        neg_log10_p: -p.log10(),
                        stop_reason: result.stop_reason.as_str().to_string(),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<PathRow> = per_replicate.into_iter().flatten().collect();
    Ok(ExperimentOutput {
        table: ExperimentTable::Path(rows),
        metadata: metadata(spec, start, 0.0),
    })
}

/// Power of a single random base burden test and of the burden ensemble at
/// each of `alternatives` random effect vectors.
pub fn run_variability(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let (scenario, tests) = prepare(spec, ExperimentKind::Variability)?;
    let effect = spec.effect.as_ref().expect("validated");
    let strength = spec.grid.as_ref().and_then(|g| g.strength).expect("validated");
    let k = spec.alternatives.expect("validated");
    let n = match &scenario.source {
        Source::Gaussian { n, .. } => *n,
        Source::Regression { .. } => unreachable!("validated: gaussian model"),
    };
    let (thresholds, records) = critical_values(spec, &scenario, &tests)?;
    let normal = Normal::standard();
    let alt_seed = SeedSpec::new(spec.seed, "alternatives");
    let point = Point {
        n: None,
        strength,
        count: None,
    };

    let mut rows = Vec::new();
    for a in 0..k {
        let mut rng = stream_for(&alt_seed, a as u64);
        let beta = Array1::from(effect_vector(effect, scenario.p, point.strength, None, None, &mut rng)?);
        let mut w = vec![0.0; scenario.p];
        fill_positive_direction(&mut rng, &WeightLaw::UniformPositiveSphere, &mut w)?;
        let w = Array1::from(w);
        let sd = scenario.cov.direction_variance(w.view())?.sqrt();
        let delta = n.sqrt() * w.dot(&scenario.cov.matrix().dot(&beta)) / sd;
        let seed = SeedSpec::new(spec.seed, format!("alternative/{a}"));
        let refs: Vec<&PreparedTest> = tests.iter().collect();
        let ps = simulate(&scenario, &refs, &Signal::Fixed(&beta), &seed, spec.replications)?;
        for (ti, p) in ps.iter().enumerate() {
            for (ai, &alpha) in spec.alphas.iter().enumerate() {
                let z = normal.inverse_cdf(1.0 - alpha / 2.0);
                let base_power = normal_sf(z - delta)? + normal_sf(z + delta)?;
                let (power, se) = rate(p, thresholds[ti][ai]);
                rows.push(VariabilityRow {
                    alternative: a,
                    test: tests[ti].label.clone(),
                    alpha,
                    base_power,
                    ensemble_power: power,
                    ensemble_se: se,
                });
            }
        }
    }
    let mut meta = metadata(spec, start, max_se(rows.iter().map(|r| r.ensemble_se)));
    meta.critical_values = records;
    Ok(ExperimentOutput {
        table: ExperimentTable::Variability(rows),
        metadata: meta,
    })
}

/// Runs whichever experiment `spec.kind` names.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    match spec.kind {
        ExperimentKind::Type1 => run_type1(spec),
        ExperimentKind::Power => run_power(spec),
        ExperimentKind::Path => run_path(spec),
        ExperimentKind::Variability => run_variability(spec),
    }
}
