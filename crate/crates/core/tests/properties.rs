use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use postsel::dist_exact::{cdf_exact, Budget};
use postsel::dist_limit::{cdf_limit, cdf_limit_integral, LocalAlternative};
use postsel::fixtures::{Fixture, FixtureName};
use postsel::selection::{Critical, SelectionRule, SubsetMask};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn exact_cdf_is_a_monotone_probability(t1 in -3.0..3.0f64, t2 in -3.0..3.0f64, step in 0.05..1.0f64, th in -1.0..1.0f64) {
        let f = Fixture::builtin(FixtureName::Coll2).with_theta(v(&[th, 0.2]));
        let problem = f.problem(5).unwrap();
        let lo = cdf_exact(&problem, &f.a, &v(&[t1, t2]), &f.critical, &Budget::default()).unwrap();
        let hi = cdf_exact(&problem, &f.a, &v(&[t1 + step, t2]), &f.critical, &Budget::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo.value));
        prop_assert!(hi.value + hi.abs_error + lo.abs_error >= lo.value);
    }

    #[test]
    fn limit_cdf_is_a_monotone_probability(t in -3.0..3.0f64, step in 0.05..1.0f64, g1 in -3.0..3.0f64, g2 in -3.0..3.0f64) {
        let f = Fixture::builtin(FixtureName::Coll2).with_a(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let limits = f.limits().unwrap();
        let crit = Critical::new(&f.critical, 0, 2).unwrap();
        let alt = LocalAlternative::new(v(&[0.0, 0.0]), v(&[g1, g2]), 1.0).unwrap();
        let lo = cdf_limit(&limits, &alt, &v(&[t]), &crit, &Budget::default()).unwrap().result.value;
        let hi = cdf_limit(&limits, &alt, &v(&[t + step]), &crit, &Budget::default()).unwrap().result.value;
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn masks_and_rules_round_trip_through_json(bits in proptest::collection::vec(any::<bool>(), 1..8), c in 0.0..4.0f64) {
        let mask = SubsetMask::new(bits);
        let back: SubsetMask = serde_json::from_str(&serde_json::to_string(&mask).unwrap()).unwrap();
        prop_assert_eq!(&back, &mask);
        let rule = SelectionRule::InformationCriterion { upsilon: c, family: vec![mask.clone(), SubsetMask::full(mask.len())] };
        let back: SelectionRule = serde_json::from_str(&serde_json::to_string(&rule).unwrap()).unwrap();
        prop_assert_eq!(back, rule);
    }
}

#[test]
fn bivariate_limit_paths_agree() {
    let f = Fixture::builtin(FixtureName::Coll2);
    let limits = f.limits().unwrap();
    let crit = Critical::new(&f.critical, 0, 2).unwrap();
    let budget = Budget { inner_samples: 200_000, ..Budget::default() };
    for (gamma, t) in [([0.0, 0.0], [0.0, 0.5]), ([1.0, -2.0], [0.3, -0.4]), ([-0.5, 3.0], [1.0, 1.0])] {
        let alt = LocalAlternative::new(v(&[0.0, 0.0]), v(&gamma), 1.0).unwrap();
        let a = cdf_limit(&limits, &alt, &v(&t), &crit, &budget).unwrap().result;
        let b = cdf_limit_integral(&limits, &alt, &v(&t), &crit, &budget).unwrap();
        assert!((a.value - b.value).abs() <= 5e-3 + a.abs_error + b.abs_error, "gamma {gamma:?}, t {t:?}: {} vs {}", a.value, b.value);
    }
}
