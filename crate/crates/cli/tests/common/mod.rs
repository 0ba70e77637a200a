#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use entest::sampling::{stream_for, SeedSpec};
use entest::simharness::{gen_genotypes, Correlation, GenotypeSpec, MafLaw};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn entest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entest")).args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Null phenotype and genotype TSVs (raw 0/1/2 counts) in `dir`.
pub fn null_dataset(dir: &Path, n: usize, p: usize, seed: u64) -> (PathBuf, PathBuf) {
    let spec = GenotypeSpec {
        n,
        p,
        maf_law: MafLaw::Uniform { lo: 0.05, hi: 0.3 },
        correlation: Correlation::Autoregressive { rho: 0.4 },
    };
    let g = gen_genotypes(&spec, &SeedSpec::new(seed, "genotypes")).unwrap();
    let mut gt = String::new();
    for row in g.centered.rows() {
        let fields: Vec<String> = row.iter().zip(&g.mafs).map(|(x, m)| format!("{}", (x + 2.0 * m).round())).collect();
        writeln!(gt, "{}", fields.join("\t")).unwrap();
    }
    let mut rng = stream_for(&SeedSpec::new(seed, "phenotype"), 0);
    let mut yt = String::new();
    for _ in 0..n {
        writeln!(yt, "{}", rng.sample::<f64, _>(StandardNormal)).unwrap();
    }
    let (gp, yp) = (dir.join("g.tsv"), dir.join("y.tsv"));
    std::fs::write(&gp, gt).unwrap();
    std::fs::write(&yp, yt).unwrap();
    (yp, gp)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
