use nalgebra::DVector;

use postsel::dist_exact::{cdf_exact, Budget};
use postsel::experiments::{impossibility_demo, Context, DemoSelection, ImpossibilitySettings};
use postsel::fixtures::{Fixture, FixtureName};
use postsel::montecarlo::{empirical_cdf, SimulationPlan};
use postsel::selection::SelectionRule;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn reported_standard_errors_match_the_spread_across_seeds() {
    let f = Fixture::builtin(FixtureName::Coll2);
    let problem = f.problem(1).unwrap();
    let t = v(&[0.1, 0.3]);
    let exact = cdf_exact(&problem, &f.a, &t, &f.critical, &Budget::default()).unwrap().value;
    let z: Vec<f64> = (0..60)
        .map(|seed| {
            let plan =
                SimulationPlan::new(problem.clone(), SelectionRule::general_to_specific(f.critical.clone()), f.a.clone(), 400, 100 + seed)
                    .unwrap();
            let e = empirical_cdf(&plan, std::slice::from_ref(&t)).unwrap();
            (e.estimates[0] - exact) / e.standard_errors[0]
        })
        .collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64).sqrt();
    assert!(mean.abs() < 0.5, "mean z {mean}");
    assert!((0.7..1.4).contains(&sd), "sd of z {sd}");
}

#[test]
fn thresholding_tallies_are_a_distribution() {
    let f = Fixture::builtin(FixtureName::Ortho2);
    let rule = SelectionRule::Thresholding { cutoffs: vec![1.5, 1.5] };
    let plan = SimulationPlan::new(f.problem(2).unwrap(), rule, f.a.clone(), 3000, 8).unwrap();
    let e = empirical_cdf(&plan, &[v(&[0.0, 0.0]), v(&[5.0, 5.0])]).unwrap();
    let total: f64 = e.models.iter().map(|m| m.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(e.estimates[1], 1.0);
    for m in &e.models {
        assert!(m.conditional_cdf.iter().all(|g| (0.0..=1.0).contains(g)));
    }
}

#[test]
fn impossibility_demo_with_aic_selection() {
    let f = Fixture::builtin(FixtureName::Coll2).with_theta(v(&[1.0, 0.0]));
    let settings =
        ImpossibilitySettings { replications: 300, reference_factor: 4, selection: DemoSelection::Aic, ..ImpossibilitySettings::default() };
    let r = impossibility_demo(&f, &v(&[0.0, 0.5]), &settings, &[100, 1600], &Context::new(12)).unwrap();
    assert_eq!(r.experiment, "impossibility_aic");
    assert_eq!(r.values("local_error_probability").len(), 2);
    let fixed = r.values("fixed_error_probability");
    let local = r.values("local_error_probability");
    assert!(local[1] > fixed[1] + 0.3, "fixed {fixed:?}, local {local:?}");
}
