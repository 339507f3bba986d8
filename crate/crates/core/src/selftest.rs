//! Quick invariant suite behind the `self-test` command. Each check runs in
//! well under a second.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dist_exact::{cdf_exact, cdf_exact_decomposed, Budget};
use crate::dist_limit::{cdf_limit, cdf_limit_integral, LocalAlternative};
use crate::error::Result;
use crate::fixtures::{Fixture, FixtureName};
use crate::montecarlo::{empirical_cdf, SimulationPlan};
use crate::normal::orthant;
use crate::selection::{Critical, SelectionRule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn limit_value() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::P1);
    let crit = Critical::new(&f.critical, 0, 1)?;
    let g = cdf_limit(&f.limits()?, &LocalAlternative::fixed(f.theta.clone(), 1.0)?, &v(&[0.0]), &crit, &Budget::default())?.result.value;
    Ok(Check { name: "single-regressor limit equals 0.975", passed: (g - 0.975).abs() < 1e-4, detail: format!("{g:.6}") })
}

fn student_oracle() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::P1).with_n(20);
    let g = cdf_exact(&f.problem(1)?, &f.a, &v(&[0.0]), &f.critical, &Budget::default())?;
    let want = StudentsT::new(0.0, 1.0, 19.0).expect("valid Student t").cdf(1.96);
    Ok(Check {
        name: "exact cdf matches the Student t oracle",
        passed: (g.value - want).abs() <= g.abs_error + 1e-8,
        detail: format!("{:.8} vs {want:.8}", g.value),
    })
}

fn two_paths() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::Coll2);
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let limits = crate::regression::LimitQuantities::new(&f.q, &a, 0)?;
    let crit = Critical::new(&f.critical, 0, 2)?;
    let alt = LocalAlternative::new(v(&[0.0, 0.0]), v(&[0.5, -1.2]), 1.0)?;
    let x = cdf_limit(&limits, &alt, &v(&[0.2]), &crit, &Budget::default())?.result.value;
    let y = cdf_limit_integral(&limits, &alt, &v(&[0.2]), &crit, &Budget::default())?.value;
    Ok(Check { name: "limit cdf evaluation paths agree", passed: (x - y).abs() < 1e-4, detail: format!("{:.2e}", (x - y).abs()) })
}

fn decomposition() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::Coll2);
    let d = cdf_exact_decomposed(&f.problem(1)?, &f.a, &v(&[0.3, -0.2]), &f.critical, &Budget::default())?;
    let total: f64 = d.terms.iter().map(|t| t.selection_probability).sum();
    Ok(Check { name: "selection probabilities sum to one", passed: (total - 1.0).abs() < 1e-5, detail: format!("{total:.8}") })
}

fn uncorrelated() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::BlockOrtho);
    let limits = f.limits()?;
    let crit = Critical::new(&f.critical, f.order_min, f.dim())?;
    let alt = LocalAlternative::new(f.theta.clone(), v(&[0.0, 1.0, -1.0]), 1.0)?;
    let t = v(&[0.7]);
    let g = cdf_limit(&limits, &alt, &t, &crit, &Budget::default())?.result.value;
    let phi = orthant(&DVector::zeros(1), &limits.order(f.dim()).v, &t, None)?.value;
    Ok(Check { name: "uncorrelated limit is Gaussian", passed: (g - phi).abs() < 1e-6, detail: format!("{:.2e}", (g - phi).abs()) })
}

fn monotone() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::Ortho2);
    let problem = f.problem(1)?;
    let mut prev: Option<(f64, f64)> = None;
    let mut ok = true;
    for i in 0..9 {
        let t = -2.0 + 0.5 * i as f64;
        let r = cdf_exact(&problem, &f.a, &v(&[t, 0.5]), &f.critical, &Budget::default())?;
        if let Some((p, e)) = prev {
            ok &= r.value + r.abs_error + e >= p;
        }
        prev = Some((r.value, r.abs_error));
    }
    Ok(Check { name: "exact cdf is monotone on a grid", passed: ok, detail: String::new() })
}

fn reproducible() -> Result<Check> {
    let f = Fixture::builtin(FixtureName::Coll2);
    let plan = SimulationPlan::new(f.problem(1)?, SelectionRule::general_to_specific(f.critical.clone()), f.a.clone(), 2000, 3)?;
    let grid = vec![v(&[0.0, 0.0])];
    let one = empirical_cdf(&plan.clone().with_workers(Some(1)), &grid)?;
    let two = empirical_cdf(&plan.with_workers(Some(3)), &grid)?;
    Ok(Check { name: "simulation independent of worker count", passed: one == two, detail: format!("{:.4}", one.estimates[0]) })
}

pub fn run() -> Result<Vec<Check>> {
    [limit_value, student_oracle, two_paths, decomposition, uncorrelated, monotone, reproducible].iter().map(|c| c()).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
