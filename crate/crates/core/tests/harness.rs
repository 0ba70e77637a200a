use std::collections::BTreeMap;
use std::time::Instant;

use entest::ensemble::{run_adaptive, EnsembleConfig, StopReason};
use entest::sampling::SeedSpec;
use entest::simharness::{
    gen_genotypes, run, Correlation, ExperimentSpec, ExperimentTable, GenotypeSpec, MafLaw,
};

fn spec(json: &str) -> ExperimentSpec {
    ExperimentSpec::from_json(json, "inline").unwrap()
}

#[test]
fn exact_tests_hold_their_level() {
    let s = spec(
        r#"{"kind":"type1","seed":1,"replications":20000,"alphas":[0.1,0.05,0.01],
        "model":{"kind":"gaussian","p":8,"correlation":{"kind":"autoregressive","rho":0.5},"n":100},
        "tests":[{"test":"chisq"},{"test":"burden"},{"test":"skat"}]}"#,
    );
    let out = run(&s).unwrap();
    let ExperimentTable::Type1(rows) = out.table else { panic!("wrong table") };
    assert_eq!(rows.len(), 9);
    for r in rows {
        let se = (r.alpha * (1.0 - r.alpha) / r.replications as f64).sqrt();
        assert!((r.rate - r.alpha).abs() <= 3.0 * se, "{} at {}: {}", r.test, r.alpha, r.rate);
    }
}

#[test]
fn power_is_monotone_in_strength() {
    let s = spec(
        r#"{"kind":"power","seed":2,"replications":400,"alphas":[0.01],
        "model":{"kind":"gaussian","p":10,"correlation":{"kind":"exchangeable","rho":0.3},"n":100},
        "tests":[{"test":"en-burden"},{"test":"burden"},{"test":"skat"},{"test":"en-subset-chisq"}],
        "ensemble":{"b":200,"subset_size":3},
        "effect":{"kind":"uniform-direction"},
        "grid":{"axis":"strength","values":[0.0,0.1,0.2,0.3,0.4,0.6]}}"#,
    );
    let out = run(&s).unwrap();
    let ExperimentTable::Power(rows) = out.table else { panic!("wrong table") };
    let mut by_test: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_test.entry(r.test.clone()).or_default().push((r.value, r.power, r.se));
    }
    assert_eq!(by_test.len(), 4);
    for (test, mut curve) in by_test {
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in curve.windows(2) {
            let slack = 2.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt();
            assert!(w[1].1 >= w[0].1 - slack, "{test}: {:?} then {:?}", w[0], w[1]);
        }
        assert!(curve.last().unwrap().1 > 0.5, "{test} never gains power");
    }
}

#[test]
fn experiments_are_reproducible() {
    let json = r#"{"kind":"power","seed":3,"replications":200,"alphas":[0.05],
        "model":{"kind":"regression","covariates":true,"genotypes":{"n":500,"p":12,
          "maf_law":{"kind":"uniform","lo":0.05,"hi":0.3},"correlation":{"kind":"autoregressive","rho":0.4}}},
        "tests":[{"test":"en-skat"},{"test":"morst","weights":{"kind":"beta","c1":1,"c2":25}},{"test":"hc"}],
        "ensemble":{"b":50},"reference_draws":2000,
        "effect":{"kind":"sparse","proportion":0.25,"magnitude":"log-maf","signs":"random"},
        "grid":{"axis":"strength","values":[0.05,0.1]},
        "calibration":{"replications":2000}}"#;
    let a = run(&spec(json)).unwrap();
    let b = run(&spec(json)).unwrap();
    assert_eq!(a.table.to_tsv(), b.table.to_tsv());
    assert_eq!(a.metadata.spec_hash, b.metadata.spec_hash);
    assert_eq!(a.metadata.critical_values, b.metadata.critical_values);

    let mut other = spec(json);
    other.seed = 4;
    assert_ne!(run(&other).unwrap().table.to_tsv(), a.table.to_tsv());
}

fn path_rows(json: &str) -> Vec<(usize, usize, String)> {
    let ExperimentTable::Path(rows) = run(&spec(json)).unwrap().table else { panic!("wrong table") };
    let mut last: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    for r in rows {
        last.insert(r.replicate, (r.b, r.stop_reason));
    }
    last.into_iter().map(|(r, (b, s))| (r, b, s)).collect()
}

#[test]
fn null_paths_stop_for_futility() {
    let finals = path_rows(
        r#"{"kind":"path","seed":5,"replications":200,"alphas":[1e-8],
        "model":{"kind":"gaussian","p":20,"correlation":{"kind":"exchangeable","rho":0.2},"n":100},
        "tests":[{"test":"en-burden"}],
        "ensemble":{"b":1000,"target_alpha":1e-8}}"#,
    );
    assert_eq!(finals.len(), 200);
    let early = finals.iter().filter(|(_, b, s)| s == "futility" && *b < 1000).count();
    assert!(early as f64 >= 0.95 * 200.0, "{early} of 200 stopped for futility");
}

#[test]
fn strong_signal_stops_at_first_block() {
    let finals = path_rows(
        r#"{"kind":"path","seed":6,"replications":100,"alphas":[1e-8],
        "model":{"kind":"gaussian","p":20,"correlation":{"kind":"exchangeable","rho":0.2},"n":10000},
        "tests":[{"test":"en-burden"}],
        "ensemble":{"b":1000,"target_alpha":1e-8},
        "effect":{"kind":"uniform-direction"},
        "grid":{"axis":"strength","values":[],"strength":0.5}}"#,
    );
    for (r, b, s) in finals {
        assert_eq!((b, s.as_str()), (100, "super-significant"), "replicate {r}");
    }
}

#[test]
fn constant_generator_gives_flat_path() {
    let cfg = EnsembleConfig {
        b_max: 1000,
        ..EnsembleConfig::fixed(SeedSpec::new(0, "ensemble"), 1000)
    };
    let out = run_adaptive(|_| Ok(0.37), &cfg).unwrap();
    assert_eq!(out.stop_reason, StopReason::BMax);
    assert_eq!(out.path.len(), 10);
    for &(_, p) in &out.path {
        assert!((p - 0.37).abs() < 1e-12);
    }
}

#[test]
fn genotype_generation_is_fast() {
    let spec = GenotypeSpec {
        n: 10_000,
        p: 100,
        maf_law: MafLaw::LogUniform { lo: 0.001, hi: 0.05 },
        correlation: Correlation::Exchangeable { rho: 0.3 },
    };
    let t = Instant::now();
    let g = gen_genotypes(&spec, &SeedSpec::new(1, "genotypes")).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(g.centered.dim(), (10_000, 100));
    assert!(secs < 1.0, "took {secs} s");
}
