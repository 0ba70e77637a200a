mod common;

use common::{gaussian, ks_scaled, random_correlation, rng, KS_CRITICAL_1E3};
use entest::base_tests::{burden, morst, skat, subset_chisq};
use entest::dist::chisq_sf;
use entest::linalg::cholesky;
use entest::score_model::ScoreModel;
use ndarray::Array1;
use rand::Rng;

#[test]
fn base_p_values_are_uniform_under_the_null() {
    let mut r = rng(77);
    for (p, draws) in [(6, 20_000), (15, 20_000)] {
        let sigma = random_correlation(p, &mut r);
        let l = cholesky(sigma.view()).unwrap();
        let w = Array1::from_shape_fn(p, |_| r.random_range(0.1..1.0));
        let subset: Vec<usize> = (0..p).step_by(2).collect();
        let mut ps: [Vec<f64>; 4] = Default::default();
        let mut stats = Vec::with_capacity(draws);
        for _ in 0..draws {
            let s = gaussian(&l, &mut r);
            let model = ScoreModel::new(s.to_vec(), sigma.clone(), 100).unwrap();
            ps[0].push(burden(&model, w.view()).unwrap().p_value);
            ps[1].push(skat(&model, w.view()).unwrap().p_value);
            ps[2].push(morst(&model, w.view(), 0.7).unwrap().p_value);
            let sub = subset_chisq(s.view(), sigma.view(), &subset).unwrap();
            ps[3].push(sub.p_value);
            stats.push(sub.statistic);
        }
        for (name, v) in ["burden", "skat", "morst", "subset_chisq"].iter().zip(ps) {
            let d = ks_scaled(v, |u| u.clamp(0.0, 1.0));
            assert!(d < KS_CRITICAL_1E3, "p={p} {name}: KS {d}");
        }
        let df = subset.len() as u32;
        let d = ks_scaled(stats, |x| 1.0 - chisq_sf(x, df).unwrap());
        assert!(d < KS_CRITICAL_1E3, "p={p} subset statistic: KS {d}");
    }
}
