//! Experiment tables (TSV) and their JSON metadata sidecars.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Row {
    pub test: String,
    pub alpha: f64,
    pub rate: f64,
    /// Binomial Monte Carlo standard error of `rate`.
    pub se: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub axis: String,
    pub value: f64,
    /// Strength actually used at this grid point.
    pub strength: f64,
    pub test: String,
    pub alpha: f64,
    pub power: f64,
    pub se: f64,
    /// Rejection threshold on the p-value scale.
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub replicate: usize,
    pub test: String,
    pub b: usize,
    pub p_value: f64,
    pub neg_log10_p: f64,
    /// Why the replicate's run stopped; repeated on each of its rows.
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityRow {
    pub alternative: usize,
    pub test: String,
    pub alpha: f64,
    /// Exact power of one base burden test with a random direction.
    pub base_power: f64,
    pub ensemble_power: f64,
    pub ensemble_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "kebab-case")]
pub enum ExperimentTable {
    Type1(Vec<Type1Row>),
    Power(Vec<PowerRow>),
    Path(Vec<PathRow>),
    Variability(Vec<VariabilityRow>),
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

impl ExperimentTable {
    pub fn len(&self) -> usize {
        match self {
            ExperimentTable::Type1(r) => r.len(),
            ExperimentTable::Power(r) => r.len(),
            ExperimentTable::Path(r) => r.len(),
            ExperimentTable::Variability(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        match self {
            ExperimentTable::Type1(rows) => {
                out.push_str("test\talpha\trate\tse\treplications\n");
                for r in rows {
                    let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.test, num(r.alpha), num(r.rate), num(r.se), r.replications);
                }
            }
            ExperimentTable::Power(rows) => {
                out.push_str("axis\tvalue\tstrength\ttest\talpha\tpower\tse\tcritical\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        r.axis,
                        r.value,
                        num(r.strength),
                        r.test,
                        num(r.alpha),
                        r.power,
                        num(r.se),
                        num(r.critical)
                    );
                }
            }
            ExperimentTable::Path(rows) => {
                out.push_str("replicate\ttest\tB\tp_value\tneg_log10_p\tstop_reason\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.replicate,
                        r.test,
                        r.b,
                        num(r.p_value),
                        r.neg_log10_p,
                        r.stop_reason
                    );
                }
            }
            ExperimentTable::Variability(rows) => {
                out.push_str("alternative\ttest\talpha\tbase_power\tensemble_power\tensemble_se\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.alternative,
                        r.test,
                        num(r.alpha),
                        r.base_power,
                        r.ensemble_power,
                        num(r.ensemble_se)
                    );
                }
            }
        }
        out
    }
}

/// Strength chosen by bisection at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedStrength {
    pub grid_value: Option<f64>,
    pub strength: f64,
    pub achieved_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub test: String,
    pub alpha: f64,
    pub critical: f64,
    pub null_replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub spec_hash: String,
    pub seed: u64,
    pub kind: String,
    pub replications: usize,
    pub wall_time_secs: f64,
    /// Largest Monte Carlo standard error in the table.
    pub max_mc_se: f64,
    pub tuned: Vec<TunedStrength>,
    pub critical_values: Vec<CriticalValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub table: ExperimentTable,
    pub metadata: Metadata,
}

impl ExperimentOutput {
    /// Writes `{stem}.tsv` and `{stem}.json` into `dir` and returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let tsv = dir.join(format!("{stem}.tsv"));
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&tsv, self.table.to_tsv())?;
        let text = serde_json::to_string_pretty(&self.metadata).expect("metadata serializes");
        std::fs::write(&json, text + "\n")?;
        Ok((tsv, json))
    }
}
