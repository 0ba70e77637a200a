//! Synthetic data and desk-scale experiments: type-I calibration, power
//! curves, p-value paths and per-alternative power variability.
//!
//! An experiment is described by an [`ExperimentSpec`] (read from JSON) and
//! produces an [`ExperimentOutput`]: a table written as TSV plus a JSON
//! metadata sidecar. Replicate `r` draws everything from its own stream, so
//! results do not depend on the thread count.

mod bank;
mod experiments;
mod genotypes;
mod output;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::ThetaRule;
use crate::error::{Error, Result};

pub use experiments::{effect_vector, run, run_path, run_power, run_type1, run_variability};
pub use genotypes::{beta_weights, gen_genotypes, Correlation, GenotypeSpec, Genotypes, MafLaw};
pub use output::{
    CriticalValue, ExperimentOutput, ExperimentTable, Metadata, PathRow, PowerRow, TunedStrength, Type1Row,
    VariabilityRow,
};

/// Fewest expected exceedances accepted at the smallest reported level.
pub const MIN_EXPECTED_EXCEEDANCES: f64 = 100.0;

/// Fewest replicates any experiment may use.
pub const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Type1,
    Power,
    Path,
    Variability,
}

/// The tests the harness and the CLI know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    EnBurden,
    EnSkat,
    EnMorst,
    EnSubsetChisq,
    Burden,
    Skat,
    Morst,
    Hc,
    Bj,
    Chisq,
}

impl TestKind {
    pub const ALL: [TestKind; 10] = [
        TestKind::EnBurden,
        TestKind::EnSkat,
        TestKind::EnMorst,
        TestKind::EnSubsetChisq,
        TestKind::Burden,
        TestKind::Skat,
        TestKind::Morst,
        TestKind::Hc,
        TestKind::Bj,
        TestKind::Chisq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::EnBurden => "en-burden",
            TestKind::EnSkat => "en-skat",
            TestKind::EnMorst => "en-morst",
            TestKind::EnSubsetChisq => "en-subset-chisq",
            TestKind::Burden => "burden",
            TestKind::Skat => "skat",
            TestKind::Morst => "morst",
            TestKind::Hc => "hc",
            TestKind::Bj => "bj",
            TestKind::Chisq => "chisq",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(
            self,
            TestKind::EnBurden | TestKind::EnSkat | TestKind::EnMorst | TestKind::EnSubsetChisq
        )
    }

    /// Whether the test uses per-variant weights.
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            TestKind::EnBurden | TestKind::EnSkat | TestKind::EnMorst | TestKind::Burden | TestKind::Skat | TestKind::Morst
        )
    }
}

/// Per-variant weights: none, or the Beta density of the MAF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    #[default]
    Flat,
    Beta { c1: f64, c2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub test: TestKind,
    #[serde(default)]
    pub weights: WeightSpec,
}

impl TestSpec {
    pub fn new(test: TestKind) -> Self {
        TestSpec {
            test,
            weights: WeightSpec::Flat,
        }
    }

    /// `en-burden` or `en-burden[beta(1,25)]`.
    pub fn label(&self) -> String {
        match self.weights {
            WeightSpec::Flat => self.test.name().to_string(),
            WeightSpec::Beta { c1, c2 } => format!("{}[beta({c1},{c2})]", self.test.name()),
        }
    }
}

/// How replicate score vectors are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `S ~ N(sqrt(n) Sigma beta, Sigma)` with a unit-diagonal `Sigma`.
    Gaussian { p: usize, correlation: Correlation, n: f64 },
    /// Fixed synthetic genotypes and Gaussian phenotypes. With covariates,
    /// `Y = 0.5 Z1 + 0.5 Z2 + G beta + e` for `Z1 ~ N(0, 1)` and `Z2 = ±0.5`.
    Regression {
        genotypes: GenotypeSpec,
        #[serde(default)]
        covariates: bool,
    },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Gaussian { p, .. } => *p,
            ModelSpec::Regression { genotypes, .. } => genotypes.p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Magnitude {
    /// `|beta_j| = beta0`.
    Constant,
    /// `|beta_j| = beta0 |log10 MAF_j|`.
    LogMaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignLaw {
    /// Every nonzero effect positive.
    Same,
    /// Independent fair signs.
    Random,
}

/// Law of the effect vector, scaled by the grid's strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EffectSpec {
    /// `beta = strength * w_beta` with `w_beta` uniform on the positive
    /// sphere, fresh for every replicate.
    UniformDirection,
    /// A uniformly chosen support of `round(proportion * p)` entries (or
    /// exactly `count`), magnitudes `strength` times the magnitude law.
    Sparse {
        #[serde(default)]
        proportion: Option<f64>,
        #[serde(default)]
        count: Option<usize>,
        magnitude: Magnitude,
        signs: SignLaw,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridAxis {
    /// Values are sample sizes for the Gaussian model.
    SampleSize,
    /// Values are effect strengths, or multipliers of the tuned strength.
    Strength,
    /// Values are support sizes of a sparse effect.
    Signals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axis: GridAxis,
    pub values: Vec<f64>,
    /// Strength used when the axis is not `strength` and nothing is tuned.
    #[serde(default)]
    pub strength: Option<f64>,
}

/// Bisection for the strength at which one test reaches a target power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    /// Label of one of the experiment's tests.
    pub test: String,
    pub alpha: f64,
    pub target_power: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_tune_iterations")]
    pub iterations: usize,
    /// Replicates per bisection step; the experiment's count when absent.
    #[serde(default)]
    pub replications: Option<usize>,
}

fn default_tune_iterations() -> usize {
    14
}

/// Monte Carlo critical values: for every reported level of at least
/// `min_alpha`, reject when the p-value is at or below the matching order
/// statistic of `replications` null p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub replications: usize,
    #[serde(default = "default_min_alpha")]
    pub min_alpha: f64,
}

fn default_min_alpha() -> f64 {
    0.01
}

/// Ensemble settings shared by every ensemble test of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    /// Base tests per ensemble; the cap for path runs.
    pub b: usize,
    pub theta: ThetaRule,
    pub subset_size: Option<usize>,
    /// Path runs only.
    pub block: usize,
    pub min_b: usize,
    pub stability_tol: f64,
    pub futility_margin: f64,
    pub supersig_margin: f64,
    pub target_alpha: Option<f64>,
    pub adaptive: bool,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        let d = crate::ensemble::EnsembleConfig::default();
        EnsembleSettings {
            b: d.b_max,
            theta: ThetaRule::default(),
            subset_size: None,
            block: d.block,
            min_b: d.min_b,
            stability_tol: d.stability_tol,
            futility_margin: d.futility_margin,
            supersig_margin: d.supersig_margin,
            target_alpha: None,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replications: usize,
    pub alphas: Vec<f64>,
    pub model: ModelSpec,
    pub tests: Vec<TestSpec>,
    #[serde(default)]
    pub ensemble: EnsembleSettings,
    #[serde(default)]
    pub effect: Option<EffectSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub tune: Option<TuneSpec>,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    /// Number of random alternatives for a variability experiment.
    #[serde(default)]
    pub alternatives: Option<usize>,
    /// Null draws behind the HC and BJ p-values.
    #[serde(default = "default_reference_draws")]
    pub reference_draws: usize,
}

fn default_reference_draws() -> usize {
    100_000
}

impl ExperimentSpec {
    /// Parses a spec from JSON, reporting the line and column of syntax and
    /// field errors, then validates it.
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.line().max(1),
            column: e.column().max(1),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.replications < MIN_REPLICATIONS {
            return bad(format!("replications={} must be at least {MIN_REPLICATIONS}", self.replications));
        }
        if self.alphas.is_empty() {
            return bad("alphas must not be empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alphas: {a} is not in (0, 1)"));
        }
        if self.tests.is_empty() {
            return bad("tests must not be empty".into());
        }
        let p = self.model.dim();
        match &self.model {
            ModelSpec::Gaussian { p, correlation, n } => {
                if *p == 0 {
                    return bad("model.p must be positive".into());
                }
                if !(n.is_finite() && *n > 0.0) {
                    return bad(format!("model.n={n} must be positive"));
                }
                correlation.matrix(*p)?;
            }
            ModelSpec::Regression { genotypes, .. } => genotypes.validate()?,
        }
        let regression = matches!(self.model, ModelSpec::Regression { .. });
        for t in &self.tests {
            if let WeightSpec::Beta { c1, c2 } = t.weights {
                if !t.test.is_weighted() {
                    return bad(format!("tests: {} takes no weights", t.test.name()));
                }
                if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
                    return bad(format!("tests: beta weights need positive shapes, got ({c1}, {c2})"));
                }
                if !regression {
                    return bad("tests: beta weights need MAFs, so the model must be `regression`".into());
                }
            }
            if matches!(t.test, TestKind::Hc | TestKind::Bj | TestKind::EnSubsetChisq | TestKind::Chisq) && p < 2 {
                return bad(format!("tests: {} needs p >= 2", t.test.name()));
            }
        }
        let e = &self.ensemble;
        if e.b == 0 || e.block == 0 || e.min_b == 0 {
            return bad("ensemble: b, block and min_b must be positive".into());
        }
        e.theta.validate()?;
        if let Some(s) = e.subset_size {
            if s == 0 || s > p {
                return bad(format!("ensemble.subset_size={s} must lie in 1..={p}"));
            }
        }
        if self.reference_draws < 1000 {
            return bad("reference_draws must be at least 1000".into());
        }
        if let Some(effect) = &self.effect {
            validate_effect(effect, p, regression)?;
        }
        if let Some(c) = &self.calibration {
            if !(c.min_alpha > 0.0 && c.min_alpha < 1.0) {
                return bad(format!("calibration.min_alpha={} is not in (0, 1)", c.min_alpha));
            }
            for &a in self.alphas.iter().filter(|&&a| a >= c.min_alpha) {
                if (c.replications as f64) * a < MIN_EXPECTED_EXCEEDANCES {
                    return bad(format!(
                        "calibration.replications={} gives fewer than {MIN_EXPECTED_EXCEEDANCES} null exceedances at alpha={a}",
                        c.replications
                    ));
                }
            }
        }
        if let Some(t) = &self.tune {
            if !self.tests.iter().any(|s| s.label() == t.test) {
                return bad(format!("tune.test={:?} is not one of the experiment's tests", t.test));
            }
            if !(t.alpha > 0.0 && t.alpha < 1.0) || !(t.target_power > 0.0 && t.target_power < 1.0) {
                return bad("tune: alpha and target_power must lie in (0, 1)".into());
            }
            if !(t.lo >= 0.0 && t.lo < t.hi && t.hi.is_finite()) {
                return bad(format!("tune: need 0 <= lo < hi, got [{}, {}]", t.lo, t.hi));
            }
            if t.iterations == 0 || t.replications.is_some_and(|r| r < MIN_REPLICATIONS) {
                return bad(format!("tune: iterations must be positive and replications at least {MIN_REPLICATIONS}"));
            }
        }
        match self.kind {
            ExperimentKind::Type1 => {
                let smallest = self.alphas.iter().cloned().fold(1.0, f64::min);
                if (self.replications as f64) * smallest < MIN_EXPECTED_EXCEEDANCES {
                    return bad(format!(
                        "replications={} gives fewer than {MIN_EXPECTED_EXCEEDANCES} expected exceedances at alpha={smallest}",
                        self.replications
                    ));
                }
            }
            ExperimentKind::Power => {
                if self.effect.is_none() {
                    return bad("power experiments need an effect".into());
                }
                let grid = match &self.grid {
                    Some(g) => g,
                    None => return bad("power experiments need a grid".into()),
                };
                if grid.values.is_empty() || grid.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("grid.values must be nonempty, finite and nonnegative".into());
                }
                match grid.axis {
                    GridAxis::SampleSize => {
                        if regression {
                            return bad("grid.axis=sample-size needs the gaussian model".into());
                        }
                        if grid.values.iter().any(|v| *v <= 0.0) {
                            return bad("grid: sample sizes must be positive".into());
                        }
                    }
                    GridAxis::Signals => {
                        if !matches!(self.effect, Some(EffectSpec::Sparse { .. })) {
                            return bad("grid.axis=signals needs a sparse effect".into());
                        }
                        if grid.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0 || *v > p as f64) {
                            return bad(format!("grid: signal counts must be integers in 1..={p}"));
                        }
                    }
                    GridAxis::Strength => {}
                }
                if grid.axis != GridAxis::Strength && self.tune.is_none() && grid.strength.is_none() {
                    return bad("grid.strength is required unless the strength is tuned".into());
                }
            }
            ExperimentKind::Path => {
                if let Some(t) = self.tests.iter().find(|t| !t.test.is_ensemble()) {
                    return bad(format!("path experiments take ensemble tests only, got {}", t.test.name()));
                }
            }
            ExperimentKind::Variability => {
                if regression {
                    return bad("variability experiments need the gaussian model".into());
                }
                if self.tests.iter().any(|t| t.test != TestKind::EnBurden) {
                    return bad("variability experiments compare en-burden with a single base burden test".into());
                }
                match self.alternatives {
                    Some(k) if k > 0 => {}
                    _ => return bad("variability experiments need a positive `alternatives`".into()),
                }
                if self.grid.as_ref().and_then(|g| g.strength).is_none() {
                    return bad("variability experiments need grid.strength".into());
                }
                if self.effect.is_none() {
                    return bad("variability experiments need an effect".into());
                }
            }
        }
        Ok(())
    }
}

fn validate_effect(effect: &EffectSpec, p: usize, regression: bool) -> Result<()> {
    if let EffectSpec::Sparse {
        proportion,
        count,
        magnitude,
        ..
    } = *effect
    {
        match (proportion, count) {
            (Some(f), None) => {
                if !(f > 0.0 && f <= 1.0) || (f * p as f64).round() < 1.0 {
                    return Err(Error::config(format!("effect.proportion={f} gives no nonzero effect at p={p}")));
                }
            }
            (None, Some(m)) => {
                if m == 0 || m > p {
                    return Err(Error::config(format!("effect.count={m} must lie in 1..={p}")));
                }
            }
            (None, None) => {}
            _ => return Err(Error::config("effect: give proportion or count, not both")),
        }
        if magnitude == Magnitude::LogMaf && !regression {
            return Err(Error::config("effect.magnitude=log-maf needs MAFs, so the model must be `regression`"));
        }
    }
    Ok(())
}
