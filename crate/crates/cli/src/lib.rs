//! The `entest` command line: single tests, sliding-window scans, p-value
//! paths and simulation experiments.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including bad
//! flags), 3 for data errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use entest::base_tests::BaseResult;
use entest::ensemble::{self, EnsembleConfig, TestResult, ThetaRule};
use entest::io::{parse_score_json, parse_tsv_matrix, parse_tsv_vector, parse_weights, TsvOptions};
use entest::reference_tests::{self, CalibrationTable, SparseTest};
use entest::sampling::{SeedSpec, WeightLaw};
use entest::score_model::{from_regression, ScoreModel};
use entest::simharness::{self, beta_weights, ExperimentSpec, TestKind};
use entest::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "entest", version, about = "Ensemble tests for a global null")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "ENTEST_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one test and print a JSON record.
    Test(TestCommand),
    /// Run a test on sliding windows of variants and print TSV.
    Scan(ScanCommand),
    /// Print the ensemble p-value path as TSV, without early stopping.
    Path(TestCommand),
    /// Run an experiment spec and write its TSV and JSON outputs.
    Simulate(SimulateCommand),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Score file: JSON with `S`, row-major `Sigma` and `n`.
    #[arg(long, conflicts_with_all = ["phenotype", "genotypes", "covariates"])]
    pub scores: Option<PathBuf>,
    /// Phenotype TSV, one value per sample.
    #[arg(long, requires = "genotypes")]
    pub phenotype: Option<PathBuf>,
    /// Genotype TSV, samples by variants.
    #[arg(long, requires = "phenotype")]
    pub genotypes: Option<PathBuf>,
    /// Covariate TSV, samples by covariates.
    #[arg(long, requires = "genotypes")]
    pub covariates: Option<PathBuf>,
    /// Every TSV input starts with a header row.
    #[arg(long)]
    pub header: bool,
    /// Minor allele frequencies (whitespace separated) for beta weights with a
    /// score file.
    #[arg(long)]
    pub mafs: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightsFlag {
    Flat,
    Beta { c1: f64, c2: f64 },
    File { path: PathBuf },
}

fn parse_weights_flag(s: &str) -> std::result::Result<WeightsFlag, String> {
    if s == "flat" {
        return Ok(WeightsFlag::Flat);
    }
    if let Some(rest) = s.strip_prefix("beta:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if let [a, b] = parts[..] {
            let c1: f64 = a.trim().parse().map_err(|_| format!("bad beta shape {a:?}"))?;
            let c2: f64 = b.trim().parse().map_err(|_| format!("bad beta shape {b:?}"))?;
            if c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite() {
                return Ok(WeightsFlag::Beta { c1, c2 });
            }
        }
        return Err("expected beta:c1,c2 with positive shapes".into());
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(WeightsFlag::File { path: path.into() });
    }
    Err("expected flat, beta:c1,c2 or file:PATH".into())
}

fn parse_test(s: &str) -> std::result::Result<TestKind, String> {
    TestKind::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = TestKind::ALL.iter().map(|t| t.name()).collect();
        format!("unknown test; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestFlags {
    #[arg(long, value_parser = parse_test)]
    pub test: TestKind,
    /// flat, beta:c1,c2 or file:PATH.
    #[arg(long, default_value = "flat", value_parser = parse_weights_flag)]
    pub weights: WeightsFlag,
    #[arg(long = "B-max", default_value_t = 1000)]
    pub b_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target level; enables the futility and super-significance stops.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fixed MORST ridge parameter instead of 1 / mean eigenvalue.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Run every ensemble to B-max.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Base tests between looks at the path.
    #[arg(long, default_value_t = 100)]
    pub block: usize,
    /// Null draws for the HC and BJ calibration tables.
    #[arg(long, default_value_t = 100_000)]
    pub reference_draws: usize,
    /// Cache directory for calibration tables.
    #[arg(long)]
    #[serde(skip)]
    pub calibration_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestCommand {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub flags: TestFlags,
}

#[derive(Debug, Args)]
pub struct ScanCommand {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub flags: TestFlags,
    /// Window width in variants, or in base pairs with --positions.
    #[arg(long)]
    pub window: u64,
    /// Step between window starts.
    #[arg(long)]
    pub skip: u64,
    /// One position per variant, nondecreasing.
    #[arg(long)]
    pub positions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateCommand {
    /// Experiment spec (JSON).
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// File stem of the outputs; defaults to the spec's.
    #[arg(long)]
    pub name: Option<String>,
}

/// 2 for configuration errors, 3 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parsed input data: raw genotypes are kept for window slicing and MAFs.
struct Inputs {
    kind: InputKind,
    mafs: Option<Vec<f64>>,
}

enum InputKind {
    Scores(ScoreModel),
    Regression {
        y: Array1<f64>,
        g: Array2<f64>,
        z: Option<Array2<f64>>,
    },
}

fn allele_frequencies(g: &Array2<f64>) -> Vec<f64> {
    g.mean_axis(Axis(0))
        .expect("genotypes have rows")
        .iter()
        .map(|m| {
            let f = m / 2.0;
            f.min(1.0 - f)
        })
        .collect()
}

fn load_inputs(input: &InputArgs) -> Result<Inputs> {
    let opts = TsvOptions { header: input.header };
    let mafs_file = match &input.mafs {
        Some(p) => Some(parse_weights(&read(p)?, &p.display().to_string())?),
        None => None,
    };
    if let Some(path) = &input.scores {
        let model = parse_score_json(&read(path)?, &path.display().to_string())?;
        return Ok(Inputs {
            kind: InputKind::Scores(model),
            mafs: mafs_file,
        });
    }
    let (yp, gp) = match (&input.phenotype, &input.genotypes) {
        (Some(y), Some(g)) => (y, g),
        _ => return Err(config("give --scores, or --phenotype with --genotypes")),
    };
    let y = parse_tsv_vector(&read(yp)?, &yp.display().to_string(), opts)?;
    let g = parse_tsv_matrix(&read(gp)?, &gp.display().to_string(), opts)?;
    let z = match &input.covariates {
        Some(zp) => Some(parse_tsv_matrix(&read(zp)?, &zp.display().to_string(), opts)?),
        None => None,
    };
    let mafs = Some(mafs_file.unwrap_or_else(|| allele_frequencies(&g)));
    Ok(Inputs {
        kind: InputKind::Regression { y, g, z },
        mafs,
    })
}

/// Per-variant weights, or `None` for flat weights.
fn aux_weights(flags: &TestFlags, mafs: Option<&[f64]>, p: usize) -> Result<Option<Vec<f64>>> {
    match &flags.weights {
        WeightsFlag::Flat => Ok(None),
        WeightsFlag::Beta { c1, c2 } => {
            let mafs = mafs.ok_or_else(|| config("beta weights need MAFs: give --genotypes or --mafs"))?;
            if mafs.len() != p {
                return Err(config(format!("{} MAFs for {p} variants", mafs.len())));
            }
            if let Some(j) = mafs.iter().position(|m| !(*m > 0.0 && *m < 1.0)) {
                return Err(Error::Data(format!("variant {} is monomorphic", j + 1)));
            }
            beta_weights(mafs, *c1, *c2).map(Some)
        }
        WeightsFlag::File { path } => {
            let w = parse_weights(&read(path)?, &path.display().to_string())?;
            if w.len() != p {
                return Err(config(format!("{}: {} weights for {p} variants", path.display(), w.len())));
            }
            Ok(Some(w))
        }
    }
}

/// The JSON record printed by `test`.
#[derive(Debug, Clone, Serialize)]
pub struct TestRecord {
    pub test: String,
    pub p_value: f64,
    pub statistic: f64,
    #[serde(rename = "B_used")]
    pub b_used: Option<usize>,
    pub stop_reason: Option<String>,
    pub path: Vec<(usize, f64)>,
    pub seed: u64,
    pub config_hash: String,
}

/// SHA-256 of the flags that determine the result.
pub fn config_hash(flags: &TestFlags) -> String {
    let text = serde_json::to_string(flags).expect("flags serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn validate_flags(flags: &TestFlags) -> Result<()> {
    if let Some(a) = flags.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(config(format!("--alpha {a} must lie in (0, 1)")));
        }
    }
    if let Some(t) = flags.theta {
        if !(t.is_finite() && t >= 0.0) {
            return Err(config(format!("--theta {t} must be finite and nonnegative")));
        }
    }
    if flags.b_max == 0 || flags.block == 0 {
        return Err(config("--B-max and --block must be positive"));
    }
    Ok(())
}

fn ensemble_config(flags: &TestFlags, law: WeightLaw, adaptive: bool) -> EnsembleConfig {
    EnsembleConfig {
        seed: SeedSpec::new(flags.seed, "ensemble"),
        b_max: flags.b_max,
        block: flags.block,
        target_alpha: flags.alpha,
        adaptive,
        law,
        subset_size: flags.subset_size,
        ..Default::default()
    }
}

enum Outcome {
    Ensemble(TestResult),
    Single(BaseResult),
}

fn sparse_table(flags: &TestFlags, test: SparseTest, p: usize) -> Result<CalibrationTable> {
    match &flags.calibration_dir {
        Some(dir) => CalibrationTable::load_or_build(dir, test, p, flags.reference_draws, flags.seed),
        None => CalibrationTable::build(test, p, flags.reference_draws, flags.seed),
    }
}

/// Runs the selected test; `aux` holds resolved per-variant weights.
fn evaluate(model: &ScoreModel, aux: Option<Vec<f64>>, flags: &TestFlags, adaptive: bool) -> Result<Outcome> {
    let p = model.dim();
    let rule = match flags.theta {
        Some(theta) => ThetaRule::Fixed { theta },
        None => ThetaRule::ReciprocalMeanEigen,
    };
    let law = match &aux {
        None => WeightLaw::UniformPositiveSphere,
        Some(a) => WeightLaw::AuxiliaryWeightedSphere { aux: a.clone() },
    };
    let fixed = Array1::from(aux.unwrap_or_else(|| vec![1.0; p]));
    let cfg = ensemble_config(flags, law, adaptive);
    Ok(match flags.test {
        TestKind::EnBurden => Outcome::Ensemble(ensemble::en_burden(model, &cfg)?),
        TestKind::EnSkat => Outcome::Ensemble(ensemble::en_skat(model, &cfg)?),
        TestKind::EnMorst => Outcome::Ensemble(ensemble::en_morst(model, &cfg, rule)?),
        TestKind::EnSubsetChisq => {
            let (z, omega) = model.standardized();
            let cfg = EnsembleConfig {
                seed: cfg.seed.child("subsets"),
                ..cfg
            };
            Outcome::Ensemble(ensemble::en_subset_chisq(z.view(), omega.view(), &cfg)?)
        }
        TestKind::Burden => Outcome::Single(reference_tests::original_burden(model, fixed.view())?),
        TestKind::Skat => Outcome::Single(reference_tests::original_skat(model, fixed.view())?),
        TestKind::Morst => Outcome::Single(match flags.theta {
            Some(theta) => reference_tests::original_morst(model, fixed.view(), theta)?,
            None => reference_tests::original_morst_default(model, fixed.view())?,
        }),
        TestKind::Hc | TestKind::Bj => {
            let test = if flags.test == TestKind::Hc {
                SparseTest::HigherCriticism
            } else {
                SparseTest::BerkJones
            };
            let table = sparse_table(flags, test, p)?;
            Outcome::Single(table.evaluate(model.standardized().0.view())?)
        }
        TestKind::Chisq => {
            let (z, omega) = model.standardized();
            Outcome::Single(reference_tests::full_chisq(z.view(), omega.view())?)
        }
    })
}

fn record(flags: &TestFlags, outcome: Outcome) -> TestRecord {
    let (p_value, statistic, b_used, stop_reason, path) = match outcome {
        Outcome::Ensemble(r) => (
            r.p_value,
            r.statistic,
            Some(r.b_used),
            Some(r.stop_reason.as_str().to_string()),
            r.path,
        ),
        Outcome::Single(r) => (r.p_value, r.statistic, None, None, Vec::new()),
    };
    TestRecord {
        test: flags.test.name().to_string(),
        p_value,
        statistic,
        b_used,
        stop_reason,
        path,
        seed: flags.seed,
        config_hash: config_hash(flags),
    }
}

fn whole_model(inputs: &Inputs) -> Result<ScoreModel> {
    match &inputs.kind {
        InputKind::Scores(m) => Ok(m.clone()),
        InputKind::Regression { y, g, z } => from_regression(y.view(), g.view(), z.as_ref().map(|z| z.view())),
    }
}

/// `test`: one JSON record.
pub fn cmd_test(cmd: &TestCommand) -> Result<TestRecord> {
    validate_flags(&cmd.flags)?;
    let inputs = load_inputs(&cmd.input)?;
    let model = whole_model(&inputs)?;
    let aux = aux_weights(&cmd.flags, inputs.mafs.as_deref(), model.dim())?;
    let outcome = evaluate(&model, aux, &cmd.flags, !cmd.flags.no_early_stop)?;
    Ok(record(&cmd.flags, outcome))
}

/// `path`: `(B, p_en)` rows with early stopping disabled.
pub fn cmd_path(cmd: &TestCommand) -> Result<String> {
    validate_flags(&cmd.flags)?;
    if !cmd.flags.test.is_ensemble() {
        return Err(config(format!("path needs an ensemble test, got {}", cmd.flags.test.name())));
    }
    let inputs = load_inputs(&cmd.input)?;
    let model = whole_model(&inputs)?;
    let aux = aux_weights(&cmd.flags, inputs.mafs.as_deref(), model.dim())?;
    let rec = record(&cmd.flags, evaluate(&model, aux, &cmd.flags, false)?);
    let mut out = format!("# seed={} config_hash={}\nB\tp_en\n", rec.seed, rec.config_hash);
    for (b, p) in rec.path {
        out.push_str(&format!("{b}\t{p:e}\n"));
    }
    Ok(out)
}

/// Variant ranges `[start, end)` covered by each window.
pub fn windows(p: usize, width: u64, skip: u64, positions: Option<&[f64]>) -> Result<Vec<(usize, usize)>> {
    if width == 0 || skip == 0 {
        return Err(config("--window and --skip must be positive"));
    }
    match positions {
        None => {
            let w = width as usize;
            if w > p {
                return Err(config(format!("window of {w} variants is larger than the {p} available")));
            }
            Ok((0..=p - w).step_by(skip as usize).map(|s| (s, s + w)).collect())
        }
        Some(pos) => {
            if pos.len() != p {
                return Err(config(format!("{} positions for {p} variants", pos.len())));
            }
            if pos.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Data("positions must be nondecreasing".into()));
            }
            let (first, last) = (pos[0], pos[p - 1]);
            if (width as f64) > last - first + 1.0 {
                return Err(config(format!("window of {width} bp is wider than the region")));
            }
            let mut out = Vec::new();
            let mut start = first;
            loop {
                let end = start + width as f64;
                let a = pos.partition_point(|&x| x < start);
                let b = pos.partition_point(|&x| x < end);
                if b > a {
                    out.push((a, b));
                }
                if end > last {
                    break;
                }
                start += skip as f64;
            }
            Ok(out)
        }
    }
}

/// `scan`: one TSV row per window.
pub fn cmd_scan(cmd: &ScanCommand) -> Result<String> {
    validate_flags(&cmd.flags)?;
    let inputs = load_inputs(&cmd.input)?;
    let (y, g, z) = match &inputs.kind {
        InputKind::Regression { y, g, z } => (y, g, z),
        InputKind::Scores(_) => return Err(config("scan needs --phenotype and --genotypes")),
    };
    let positions = match &cmd.positions {
        Some(path) => {
            let text = read(path)?;
            let v = parse_tsv_vector(&text, &path.display().to_string(), TsvOptions { header: cmd.input.header })?;
            Some(v.to_vec())
        }
        None => None,
    };
    let p = g.ncols();
    let ranges = windows(p, cmd.window, cmd.skip, positions.as_deref())?;
    let aux = aux_weights(&cmd.flags, inputs.mafs.as_deref(), p)?;
    let rows = ranges
        .par_iter()
        .map(|&(a, b)| {
            let model = from_regression(y.view(), g.slice(s![.., a..b]), z.as_ref().map(|z| z.view()))?;
            let window_aux = aux.as_ref().map(|w| w[a..b].to_vec());
            evaluate(&model, window_aux, &cmd.flags, !cmd.flags.no_early_stop).map(|o| (a, b, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = format!(
        "# seed={} config_hash={}\nstart\tend\tp_value\tB_used\tstop_reason\n",
        cmd.flags.seed,
        config_hash(&cmd.flags)
    );
    for (a, b, outcome) in rows {
        let rec = record(&cmd.flags, outcome);
        let b_used = rec.b_used.map_or("NA".to_string(), |b| b.to_string());
        let stop = rec.stop_reason.unwrap_or_else(|| "NA".to_string());
        out.push_str(&format!("{}\t{}\t{:e}\t{}\t{}\n", a + 1, b, rec.p_value, b_used, stop));
    }
    Ok(out)
}

/// `simulate`: writes `{name}.tsv` and `{name}.json` and returns their paths.
pub fn cmd_simulate(cmd: &SimulateCommand) -> Result<String> {
    let text = read(&cmd.spec)?;
    let spec = ExperimentSpec::from_json(&text, &cmd.spec.display().to_string()).map_err(|e| match e {
        Error::Parse { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    let out = simharness::run(&spec)?;
    let stem = cmd.name.clone().unwrap_or_else(|| {
        cmd.spec
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into())
    });
    let (tsv, json) = out.write(&cmd.out, &stem)?;
    Ok(format!("{}\n{}\n", tsv.display(), json.display()))
}

/// Runs a parsed command line and returns what goes to standard output.
pub fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Test(cmd) => {
            let rec = cmd_test(cmd)?;
            Ok(serde_json::to_string(&rec).expect("record serializes") + "\n")
        }
        Command::Path(cmd) => cmd_path(cmd),
        Command::Scan(cmd) => cmd_scan(cmd),
        Command::Simulate(cmd) => cmd_simulate(cmd),
    }
}
