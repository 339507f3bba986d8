//! Seeded, parallel brute-force simulation of the post-selection estimator.
//!
//! Replication `i` draws its noise from stream `i` of a seed derived from
//! the master seed, so every result is a pure function of the plan and is
//! unaffected by the number of workers or the order in which replications
//! run. Partial results are produced per fixed-size chunk and merged in
//! chunk order.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::regression::RegressionProblem;
use crate::rng::{derive_seed, purpose, stream_rng};
use crate::selection::{g2s_from_stats, post_select_fit, Critical, Selected, SelectionRule};

/// Replications handled by one work item.
pub const CHUNK: usize = 256;

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("worker count must be positive".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Applies `f` to consecutive chunks of `0..total` in parallel and returns
/// the results in chunk order.
pub fn map_chunks<T, F>(total: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    let chunks = total.div_ceil(CHUNK);
    with_workers(workers, || (0..chunks).into_par_iter().map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(total))).collect::<Result<Vec<T>>>())?
}

/// Applies `f` to every replication index and returns the results in index order.
pub fn map_replications<T, F>(total: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let nested = map_chunks(total, workers, |range| range.map(&f).collect::<Result<Vec<T>>>())?;
    Ok(nested.into_iter().flatten().collect())
}

/// Standard normal noise vector of replication `rep`. Every parameter
/// value simulated from the same master seed sees the same noise.
pub fn standard_noise(n: usize, master_seed: u64, rep: usize) -> DVector<f64> {
    let mut rng = stream_rng(derive_seed(master_seed, &[purpose::RESPONSE]), rep as u64);
    DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// `Y = Xθ + σε` for replication `rep`.
pub fn simulate_response(problem: &RegressionProblem, master_seed: u64, rep: usize) -> DVector<f64> {
    let eps = standard_noise(problem.n(), master_seed, rep);
    problem.design().x() * problem.theta() + eps * problem.sigma()
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub problem: RegressionProblem,
    pub rule: SelectionRule,
    pub a: DMatrix<f64>,
    pub replications: usize,
    pub master_seed: u64,
    /// `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub rep: usize,
    pub selected: Selected,
    pub estimate: DVector<f64>,
    pub sigma_hat: f64,
}

enum Selector {
    Nested(Critical),
    Other(SelectionRule),
}

impl SimulationPlan {
    pub fn new(problem: RegressionProblem, rule: SelectionRule, a: DMatrix<f64>, replications: usize, master_seed: u64) -> Result<Self> {
        let plan = Self { problem, rule, a, replications, master_seed, workers: None };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.a.ncols() != self.problem.dim() || self.a.nrows() == 0 {
            return Err(Error::Dimension(format!("A is {}x{}, expected k x {}", self.a.nrows(), self.a.ncols(), self.problem.dim())));
        }
        self.rule.validate(&self.problem)
    }

    fn selector(&self) -> Result<Selector> {
        Ok(match &self.rule {
            SelectionRule::GeneralToSpecific { critical } => {
                Selector::Nested(Critical::new(critical, self.problem.order_min(), self.problem.dim())?)
            }
            other => Selector::Other(other.clone()),
        })
    }

    fn run_one(&self, selector: &Selector, rep: usize) -> Result<Option<Replication>> {
        let y = simulate_response(&self.problem, self.master_seed, rep);
        let outcome = match selector {
            Selector::Nested(crit) => {
                let fit = self.problem.fit(&y)?;
                if fit.is_degenerate() {
                    return Ok(None);
                }
                let design = self.problem.design();
                let t = DVector::from_fn(self.problem.dim() + 1, |p, _| fit.t_stat(design, p));
                let p = g2s_from_stats(&t, crit);
                Replication { rep, selected: Selected::Order(p), estimate: fit.estimate(design, p), sigma_hat: fit.sigma_hat() }
            }
            Selector::Other(rule) => match post_select_fit(&self.problem, &y, rule) {
                Ok(f) => Replication { rep, selected: f.selected, estimate: f.estimate, sigma_hat: f.sigma_hat },
                Err(Error::DegenerateSample(_)) => return Ok(None),
                Err(e) => return Err(e),
            },
        };
        Ok(Some(outcome))
    }

    /// Replication `rep` on its own; `None` when the sample is degenerate.
    pub fn replicate(&self, rep: usize) -> Result<Option<Replication>> {
        self.run_one(&self.selector()?, rep)
    }

    /// All replications in index order; degenerate ones are `None`.
    pub fn replications(&self) -> Result<Vec<Option<Replication>>> {
        let selector = self.selector()?;
        map_replications(self.replications, self.workers, |rep| self.run_one(&selector, rep))
    }

    /// `√n A(θ̃ − θ)` for one replication.
    pub fn target(&self, r: &Replication) -> DVector<f64> {
        &self.a * (&r.estimate - self.problem.theta()) * (self.problem.n() as f64).sqrt()
    }
}

/// Tally of one selected model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTally {
    pub model: Selected,
    pub count: usize,
    /// `π̂(model)`.
    pub probability: f64,
    /// Replications selecting this model with target `≤ t`, per grid point.
    pub hits: Vec<usize>,
    /// `Ĝ(t | model)`, per grid point.
    pub conditional_cdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCdf {
    pub grid: Vec<DVector<f64>>,
    pub estimates: Vec<f64>,
    /// `√(ĝ(1 − ĝ)/N)` with `N` the number of usable replications.
    pub standard_errors: Vec<f64>,
    pub replications: usize,
    pub degenerate: usize,
    pub models: Vec<ModelTally>,
}

impl EmpiricalCdf {
    pub fn valid(&self) -> usize {
        self.replications - self.degenerate
    }

    pub fn model(&self, model: &Selected) -> Option<&ModelTally> {
        self.models.iter().find(|m| &m.model == model)
    }
}

#[derive(Default)]
struct Tallies {
    degenerate: usize,
    by_model: BTreeMap<Selected, (usize, Vec<usize>)>,
}

impl Tallies {
    fn merge(&mut self, other: Tallies) {
        self.degenerate += other.degenerate;
        for (model, (count, hits)) in other.by_model {
            let entry = self.by_model.entry(model).or_insert_with(|| (0, vec![0; hits.len()]));
            entry.0 += count;
            for (a, b) in entry.1.iter_mut().zip(hits) {
                *a += b;
            }
        }
    }
}

/// Fraction of replications with `√n A(θ̃ − θ) ≤ t` at each grid point,
/// with per-model tallies.
pub fn empirical_cdf(plan: &SimulationPlan, grid: &[DVector<f64>]) -> Result<EmpiricalCdf> {
    plan.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid is empty".into()));
    }
    let k = plan.a.nrows();
    if let Some(t) = grid.iter().find(|t| t.len() != k) {
        return Err(Error::Dimension(format!("grid point has length {}, expected k = {k}", t.len())));
    }
    let selector = plan.selector()?;
    let parts = map_chunks(plan.replications, plan.workers, |range| {
        let mut tallies = Tallies::default();
        for rep in range {
            let Some(r) = plan.run_one(&selector, rep)? else {
                tallies.degenerate += 1;
                continue;
            };
            let target = plan.target(&r);
            let entry = tallies.by_model.entry(r.selected).or_insert_with(|| (0, vec![0; grid.len()]));
            entry.0 += 1;
            for (h, t) in entry.1.iter_mut().zip(grid) {
                if target.iter().zip(t.iter()).all(|(x, u)| x <= u) {
                    *h += 1;
                }
            }
        }
        Ok(tallies)
    })?;
    let mut total = Tallies::default();
    for part in parts {
        total.merge(part);
    }
    let valid = plan.replications - total.degenerate;
    let mut hits = vec![0usize; grid.len()];
    let models = total
        .by_model
        .into_iter()
        .map(|(model, (count, h))| {
            for (a, b) in hits.iter_mut().zip(&h) {
                *a += b;
            }
            ModelTally {
                probability: count as f64 / valid as f64,
                conditional_cdf: h.iter().map(|&x| x as f64 / count as f64).collect(),
                model,
                count,
                hits: h,
            }
        })
        .collect();
    let estimates: Vec<f64> = hits.iter().map(|&h| if valid == 0 { f64::NAN } else { h as f64 / valid as f64 }).collect();
    let standard_errors = estimates.iter().map(|&g| (g * (1.0 - g) / valid as f64).sqrt()).collect();
    Ok(EmpiricalCdf {
        grid: grid.to_vec(),
        estimates,
        standard_errors,
        replications: plan.replications,
        degenerate: total.degenerate,
        models,
    })
}

/// Frequency of a per-replication event, with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub value: f64,
    pub standard_error: f64,
    pub valid: usize,
    pub degenerate: usize,
}

impl Frequency {
    pub fn from_counts(hits: usize, valid: usize, degenerate: usize) -> Self {
        let value = if valid == 0 { f64::NAN } else { hits as f64 / valid as f64 };
        Self { value, standard_error: (value * (1.0 - value) / valid as f64).sqrt(), valid, degenerate }
    }
}

/// Frequency of `|Ĝ(t) − reference| > delta` over responses simulated
/// under the plan's parameter. `estimator` maps a response to `Ĝ(t)` and
/// returns `None` for degenerate samples.
pub fn estimator_error_probability<F>(plan: &SimulationPlan, estimator: F, reference: f64, delta: f64) -> Result<Frequency>
where
    F: Fn(&DVector<f64>) -> Result<Option<f64>> + Sync + Send,
{
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    if !(0.0..=1.0).contains(&reference) {
        return Err(Error::InvalidArgument(format!("reference cdf value {reference} is outside [0, 1]")));
    }
    let outcomes = map_chunks(plan.replications, plan.workers, |range| {
        let mut hits = 0;
        let mut degenerate = 0;
        for rep in range {
            let y = simulate_response(&plan.problem, plan.master_seed, rep);
            match estimator(&y)? {
                Some(g) if (g - reference).abs() > delta => hits += 1,
                Some(_) => {}
                None => degenerate += 1,
            }
        }
        Ok((hits, degenerate))
    })?;
    let (hits, degenerate) = outcomes.into_iter().fold((0, 0), |(h, d), (a, b)| (h + a, d + b));
    Ok(Frequency::from_counts(hits, plan.replications - degenerate, degenerate))
}

/// Shortest representation that parses back to the same value.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

/// Writes one CSV row per replication: `rep, selected_model,
/// estimate_1..estimate_P, sigma_hat`. Degenerate replications are
/// written with the model `degenerate` and empty estimate fields.
pub fn write_raw_dump(plan: &SimulationPlan, path: &Path) -> Result<usize> {
    let rows = plan.replications()?;
    let dim = plan.problem.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["rep".to_string(), "selected_model".to_string()];
    header.extend((1..=dim).map(|i| format!("estimate_{i}")));
    header.push("sigma_hat".into());
    w.write_record(&header)?;
    for (rep, row) in rows.iter().enumerate() {
        let mut rec = vec![rep.to_string()];
        match row {
            Some(r) => {
                rec.push(r.selected.to_string());
                rec.extend(r.estimate.iter().map(|&v| fmt_float(v)));
                rec.push(fmt_float(r.sigma_hat));
            }
            None => {
                rec.push("degenerate".into());
                rec.extend(std::iter::repeat_n(String::new(), dim + 1));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{Fixture, FixtureName};

    fn plan(reps: usize) -> SimulationPlan {
        let f = Fixture::builtin(FixtureName::Ortho2);
        let problem = f.problem(1).unwrap();
        SimulationPlan::new(problem, SelectionRule::general_to_specific(f.critical.clone()), f.a.clone(), reps, 99).unwrap()
    }

    #[test]
    fn responses_are_reproducible() {
        let p = plan(1);
        assert_eq!(simulate_response(&p.problem, 5, 3), simulate_response(&p.problem, 5, 3));
        assert_ne!(simulate_response(&p.problem, 5, 3), simulate_response(&p.problem, 5, 4));
    }

    #[test]
    fn tallies_decompose_the_cdf() {
        let p = plan(3000);
        let grid: Vec<DVector<f64>> = [[-1.0, 0.0], [0.0, 0.0], [1.0, 1.0]].iter().map(|t| DVector::from_column_slice(t)).collect();
        let e = empirical_cdf(&p, &grid).unwrap();
        assert_eq!(e.models.iter().map(|m| m.count).sum::<usize>() + e.degenerate, 3000);
        for (i, g) in e.estimates.iter().enumerate() {
            let recomposed: f64 = e.models.iter().map(|m| m.conditional_cdf[i] * m.probability).sum();
            assert!((recomposed - g).abs() < 1e-14);
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let p = plan(1000);
        let grid = vec![DVector::from_vec(vec![0.5, 0.5])];
        let one = empirical_cdf(&p.clone().with_workers(Some(1)), &grid).unwrap();
        let many = empirical_cdf(&p.with_workers(Some(4)), &grid).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn error_probability_is_zero_at_unit_delta() {
        let p = plan(500);
        let f = estimator_error_probability(&p, |_| Ok(Some(0.3)), 0.5, 1.0).unwrap();
        assert_eq!(f.value, 0.0);
        let g = estimator_error_probability(&p, |_| Ok(Some(0.0)), 1.0, 0.5).unwrap();
        assert_eq!(g.value, 1.0);
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e21] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
