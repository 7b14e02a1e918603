use proptest::prelude::*;
use scoremix::catalog::default_catalog;
use scoremix::diagnostics::{histogram, qq_data};
use scoremix::lme::{fit, Criterion, LmeSpec};
use scoremix::predictors::{distance_features, group_sum, Design};
use scoremix::ranking::pearson;

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_symmetric_and_nonnegative(
        a in prop::collection::vec(finite(-5.0, 5.0), 46),
        b in prop::collection::vec(finite(-5.0, 5.0), 46),
    ) {
        let ab = distance_features(&a, &b);
        let ba = distance_features(&b, &a);
        prop_assert_eq!(&ab, &ba);
        prop_assert!(ab.iter().all(|d| *d >= 0.0));
        prop_assert!(distance_features(&a, &a).iter().all(|d| *d == 0.0));
    }

    #[test]
    fn group_sum_is_linear(
        a in prop::collection::vec(finite(0.0, 5.0), 46),
        b in prop::collection::vec(finite(0.0, 5.0), 46),
        k in finite(0.0, 3.0),
    ) {
        let scheme = default_catalog().groups().clone();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let (ga, gb, gc) = (group_sum(&a, &scheme), group_sum(&b, &scheme), group_sum(&combo, &scheme));
        for i in 0..scheme.len() {
            prop_assert!((gc[i] - (ga[i] + k * gb[i])).abs() < 1e-9 * (1.0 + gc[i].abs()));
        }
        let total: f64 = ga.iter().sum();
        let direct: f64 = a.iter().sum();
        prop_assert!((total - direct).abs() < 1e-9 * (1.0 + direct));
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        pairs in prop::collection::vec((finite(-10.0, 10.0), finite(-10.0, 10.0)), 3..60),
        scale in finite(0.1, 10.0),
        shift in finite(-50.0, 50.0),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let a2: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            let r2 = pearson(&a2, &b).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((pearson(&neg, &b).unwrap() + r).abs() < 1e-9);
            prop_assert!((pearson(&b, &a).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn qq_is_monotone(values in prop::collection::vec(finite(-100.0, 100.0), 3..200)) {
        if let Ok(qq) = qq_data(&values) {
            prop_assert_eq!(qq.len(), values.len());
            for w in qq.windows(2) {
                prop_assert!(w[0].theoretical < w[1].theoretical);
                prop_assert!(w[0].empirical <= w[1].empirical);
            }
        }
    }

    #[test]
    fn histogram_counts_everything_and_ignores_order(
        mut values in prop::collection::vec(finite(-100.0, 100.0), 1..300),
    ) {
        let h = histogram(&values).unwrap();
        prop_assert_eq!(h.total(), values.len());
        prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(h.counts.len() <= scoremix::diagnostics::MAX_BINS);
        values.reverse();
        prop_assert_eq!(histogram(&values).unwrap(), h);
    }
}

fn small_design(seed: u64, speakers: usize, per: usize) -> Design {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let n = speakers * per;
    let offsets: Vec<f64> = (0..speakers).map(|_| 3.0 * next()).collect();
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    for i in 0..n {
        let (x1, x2) = (next(), next());
        x.extend([x1, x2]);
        y.push(1.0 + 2.0 * x1 - x2 + offsets[i / per] + next());
        idx.push(i / per);
    }
    let names = vec!["x1".to_string(), "x2".to_string()];
    let spk = (0..speakers).map(|s| format!("s{s}")).collect();
    Design::from_parts(y, x, names, idx, spk).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_invariants(seed in any::<u64>(), speakers in 3usize..12, per in 2usize..8) {
        let design = small_design(seed, speakers, per);
        for criterion in [Criterion::Ml, Criterion::Reml] {
            let f = fit(&LmeSpec::new(&design, criterion)).unwrap();
            prop_assert!(f.theta >= 0.0);
            prop_assert!(f.sigma2 > 0.0);
            prop_assert!(f.se.iter().all(|s| *s > 0.0));
            let resid_sum: f64 = f.residuals.iter().sum();
            prop_assert!(resid_sum.abs() < 1e-8 * (1.0 + design.n_rows() as f64));
            for i in 0..design.n_rows() {
                prop_assert!((f.fitted[i] + f.residuals[i] - design.response()[i]).abs() < 1e-9);
            }
            let aic = 2.0 * (f.n_fixed() as f64 + 2.0) - 2.0 * f.loglik_ml;
            prop_assert!((f.aic - aic).abs() < 1e-9 * (1.0 + aic.abs()));
        }
    }
}
