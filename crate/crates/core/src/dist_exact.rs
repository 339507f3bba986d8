//! Exact finite-sample cdf of `√n A(θ̃ − θ)` for the general-to-specific
//! post-model-selection estimator, together with its decomposition into
//! conditional cdfs and selection probabilities.
//!
//! Every term is an integral over `s = σ̂/σ` against the density `h` of
//! `(χ²_{n−P}/(n−P))^{1/2}`. For the term of order `p > O` the inner part is
//! `P(Z ≤ t − √n A(η_n(p) − θ), |W + √n η_{n,p}(p)| ≥ s c_p σ ξ_{n,p})`
//! where `Z ~ N(0, σ²A[p](X[p]'X[p]/n)^{-1}A[p]')` and `W` is the scaled
//! last coordinate of the restricted estimator, which is what the
//! integrand `1 − Δ_{σζ}(· + b z, ·)` averages over `Φ_{n,p}(dz)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{delta, delta_complement, orthant, sigma_ratio_pdf_unchecked, sigma_ratio_support, Estimate, SamplingSpec};
use crate::quadrature::{integrate_partitioned, QuadResult, QuadSettings};
use crate::regression::{ProjectionQuantities, RegressionProblem};
use crate::rng::{derive_seed, purpose};
use crate::selection::Critical;
use crate::terms::{GaussianPair, InnerKind, InnerMethod, InnerSettings};

/// Accuracy settings shared by the exact and the limiting cdf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Absolute tolerance of the outer integral over `σ̂/σ`.
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Absolute tolerance of inner one-dimensional quadratures.
    pub inner_tol: f64,
    /// Draws for sampled inner integrals.
    pub inner_samples: usize,
    /// Draws for Gaussian orthant probabilities in three or more dimensions.
    pub orthant_samples: usize,
    pub inner_method: InnerMethod,
    /// Mass of `σ̂/σ` allowed outside the integration range.
    pub tail_mass: f64,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            abs_tol: 1e-5,
            max_subdivisions: 200,
            inner_tol: 1e-11,
            inner_samples: 100_000,
            orthant_samples: 100_000,
            inner_method: InnerMethod::Auto,
            tail_mass: 1e-10,
            seed: 0x5eed,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.inner_tol > 0.0) || !(self.tail_mass > 0.0 && self.tail_mass < 1.0) {
            return Err(Error::InvalidArgument("tolerances must be positive and the tail mass below one".into()));
        }
        if self.inner_samples == 0 || self.orthant_samples == 0 || self.max_subdivisions == 0 {
            return Err(Error::InvalidArgument("sample counts and subdivision limits must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn inner(&self, label: u64) -> InnerSettings {
        InnerSettings {
            method: self.inner_method,
            samples: self.inner_samples,
            quad: QuadSettings { abs_tol: self.inner_tol, max_subdivisions: self.max_subdivisions },
            seed: derive_seed(self.seed, &[purpose::INNER_SAMPLING, label]),
        }
    }

    pub(crate) fn orthant_spec(&self, label: u64) -> SamplingSpec {
        SamplingSpec { samples: self.orthant_samples, seed: derive_seed(self.seed, &[purpose::ORTHANT, label]), stream: 0 }
    }
}

/// How a cdf value was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub outer_evaluations: usize,
    pub inner: Vec<InnerKind>,
    pub inner_samples: Option<usize>,
    pub seed: u64,
}

/// A cdf value with an error bound: quadrature estimates plus three
/// standard errors of every sampled component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfResult {
    pub value: f64,
    pub abs_error: f64,
    /// The raw sum fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    /// Some adaptive integral stopped at its subdivision limit.
    pub budget_exhausted: bool,
    pub method: MethodReport,
}

impl CdfResult {
    pub(crate) fn from_raw(raw: f64, abs_error: f64, budget_exhausted: bool, method: MethodReport) -> Self {
        let value = raw.clamp(0.0, 1.0);
        Self { value, abs_error, clamped: value != raw, budget_exhausted, method }
    }
}

/// One model's share of the cdf: `G(t | p) π(p)` and its factors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTerm {
    pub p: usize,
    /// `G(t | p) π(p)`.
    pub joint: f64,
    pub selection_probability: f64,
    pub conditional_cdf: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposedCdf {
    pub terms: Vec<ModelTerm>,
    pub total: CdfResult,
}

fn check_query(problem: &RegressionProblem, a: &DMatrix<f64>, t: &DVector<f64>) -> Result<()> {
    if a.ncols() != problem.dim() {
        return Err(Error::Dimension(format!("A has {} columns, expected P = {}", a.ncols(), problem.dim())));
    }
    if t.len() != a.nrows() {
        return Err(Error::Dimension(format!("t has length {}, expected k = {}", t.len(), a.nrows())));
    }
    if t.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("t contains NaN".into()));
    }
    Ok(())
}

pub fn cdf_exact(problem: &RegressionProblem, a: &DMatrix<f64>, t: &DVector<f64>, critical: &[f64], budget: &Budget) -> Result<CdfResult> {
    Ok(cdf_exact_decomposed(problem, a, t, critical, budget)?.total)
}

pub fn cdf_exact_decomposed(
    problem: &RegressionProblem,
    a: &DMatrix<f64>,
    t: &DVector<f64>,
    critical: &[f64],
    budget: &Budget,
) -> Result<DecomposedCdf> {
    budget.validate()?;
    check_query(problem, a, t)?;
    let dim = problem.dim();
    let order_min = problem.order_min();
    let crit = Critical::new(critical, order_min, dim)?;
    let n = problem.n();
    let sqrt_n = (n as f64).sqrt();
    let sigma = problem.sigma();
    let dof = (n - dim) as f64;
    let (s_lo, s_hi) = sigma_ratio_support(n - dim, 0.5 * budget.tail_mass);

    let quantities: Vec<ProjectionQuantities> = (1..=dim).map(|p| problem.projection_quantities(a, p)).collect::<Result<_>>()?;
    let eta = |p: usize| -> Result<DVector<f64>> { problem.eta(p) };
    // `μ_q = √n η_{n,q}(q) / (σ ξ_{n,q})` turns every Δ factor into `Δ_1(μ_q, s c_q)`.
    let mu: Vec<f64> = (1..=dim).map(|q| sqrt_n * quantities[q - 1].eta[q - 1] / (sigma * quantities[q - 1].order.xi)).collect();
    let prod_above = |p: usize, s: f64| -> f64 { ((p + 1)..=dim).map(|q| delta(1.0, mu[q - 1], s * crit.at(q))).product() };
    let h = |s: f64| sigma_ratio_pdf_unchecked(dof, s);
    let n_integrals = 2 * (dim - order_min) + 1;
    let quad = QuadSettings { abs_tol: budget.abs_tol / n_integrals as f64, max_subdivisions: budget.max_subdivisions };
    let outer = |f: &dyn Fn(f64) -> f64| -> QuadResult { integrate_partitioned(f, s_lo, s_hi, 4, quad) };
    let shifted_t = |p: usize| -> Result<DVector<f64>> { Ok(t - a * (eta(p)? - problem.theta()) * sqrt_n) };

    let mut terms = Vec::with_capacity(dim - order_min + 1);
    let mut evaluations = 0;
    let mut exhausted = false;
    let mut kinds = Vec::new();
    let mut inner_samples = None;
    let truncation = budget.tail_mass;

    // Smallest model: Φ_{n,O} at the shifted argument times π(O).
    let upper = shifted_t(order_min)?;
    let first_orthant = if order_min == 0 {
        Estimate::exact(if upper.iter().all(|&u| u >= 0.0) { 1.0 } else { 0.0 })
    } else {
        let v = &quantities[order_min - 1].order.v * (sigma * sigma);
        let est = orthant(&DVector::zeros(a.nrows()), &v, &upper, Some(budget.orthant_spec(order_min as u64)))?;
        Estimate { value: est.value, error: 3.0 * est.error }
    };
    let pi_first = outer(&|s| prod_above(order_min, s) * h(s));
    evaluations += pi_first.evaluations;
    exhausted |= !pi_first.converged;
    terms.push(ModelTerm {
        p: order_min,
        joint: first_orthant.value * pi_first.value,
        selection_probability: pi_first.value,
        conditional_cdf: first_orthant.value,
        abs_error: first_orthant.error + pi_first.error + truncation,
    });

    for p in (order_min + 1)..=dim {
        let pq = &quantities[p - 1];
        let pair = GaussianPair::new(&pq.order, sigma);
        let prepared = pair.prepare(&shifted_t(p)?, &budget.inner(p as u64), 0)?;
        kinds.push(prepared.kind());
        if let Some(s) = prepared.samples() {
            inner_samples = Some(s);
        }
        let shift = sqrt_n * pq.eta[p - 1];
        let scale = crit.at(p) * sigma * pq.order.xi;
        let inner_err = std::cell::Cell::new(0.0_f64);
        let joint = outer(&|s| {
            let e = prepared.eval(shift, s * scale);
            if e.error > inner_err.get() {
                inner_err.set(e.error);
            }
            e.value * prod_above(p, s) * h(s)
        });
        let pi = outer(&|s| delta_complement(1.0, mu[p - 1], s * crit.at(p)) * prod_above(p, s) * h(s));
        evaluations += joint.evaluations + pi.evaluations;
        exhausted |= !joint.converged || !pi.converged;
        let sampled = prepared.kind() == InnerKind::Sampling;
        let inner_error = if sampled {
            // Sample mean of per-draw integrals in [0, 1].
            let v = joint.value.clamp(0.0, 1.0);
            3.0 * (v * (1.0 - v) / prepared.samples().unwrap_or(1) as f64).sqrt()
        } else {
            inner_err.get()
        };
        let conditional = if pi.value > 0.0 { (joint.value / pi.value).clamp(0.0, 1.0) } else { 0.0 };
        terms.push(ModelTerm {
            p,
            joint: joint.value,
            selection_probability: pi.value,
            conditional_cdf: conditional,
            abs_error: joint.error + inner_error + pi.error + truncation,
        });
    }

    let raw: f64 = terms.iter().map(|t| t.joint).sum();
    let abs_error: f64 = terms.iter().map(|t| t.abs_error).sum();
    let method = MethodReport { outer_evaluations: evaluations, inner: kinds, inner_samples, seed: budget.seed };
    Ok(DecomposedCdf { terms, total: CdfResult::from_raw(raw, abs_error, exhausted, method) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::Design;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use std::sync::Arc;

    fn p1(n: usize, theta: f64) -> RegressionProblem {
        let x = DMatrix::from_element(n, 1, 1.0);
        RegressionProblem::new(Arc::new(Design::new(x, None).unwrap()), DVector::from_vec(vec![theta]), 1.0, 0).unwrap()
    }

    #[test]
    fn single_regressor_at_zero_is_student_t_cdf() {
        // With θ = 0 the event {√n θ̃ ≤ 0} is {T ≤ c} for T ~ t_{n−1}.
        for &n in &[5usize, 20, 200] {
            let pr = p1(n, 0.0);
            let a = DMatrix::from_element(1, 1, 1.0);
            let r = cdf_exact(&pr, &a, &DVector::from_vec(vec![0.0]), &[1.96], &Budget::default()).unwrap();
            let want = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().cdf(1.96);
            assert!((r.value - want).abs() < 1e-6 + r.abs_error, "n = {n}: {} vs {want}", r.value);
            assert!(r.abs_error < 1e-4);
        }
    }

    #[test]
    fn decomposition_sums_and_probabilities_are_positive() {
        let pr = p1(30, 0.2);
        let a = DMatrix::from_element(1, 1, 1.0);
        let d = cdf_exact_decomposed(&pr, &a, &DVector::from_vec(vec![0.3]), &[1.5], &Budget::default()).unwrap();
        let sum: f64 = d.terms.iter().map(|t| t.conditional_cdf * t.selection_probability).sum();
        assert!((sum - d.total.value).abs() <= d.total.abs_error + 1e-12);
        let pis: f64 = d.terms.iter().map(|t| t.selection_probability).sum();
        assert!((pis - 1.0).abs() < 1e-6);
        assert!(d.terms.iter().all(|t| t.selection_probability > 0.0));
    }

    #[test]
    fn extreme_arguments_reach_zero_and_one() {
        let pr = p1(30, 0.2);
        let a = DMatrix::from_element(1, 1, 1.0);
        let hi = cdf_exact(&pr, &a, &DVector::from_vec(vec![20.0]), &[1.5], &Budget::default()).unwrap();
        let lo = cdf_exact(&pr, &a, &DVector::from_vec(vec![-20.0]), &[1.5], &Budget::default()).unwrap();
        assert!(hi.value >= 1.0 - 1e-4);
        assert!(lo.value <= 1e-4);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let pr = p1(30, 0.2);
        let a = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(cdf_exact(&pr, &a, &DVector::from_vec(vec![0.0, 1.0]), &[1.5], &Budget::default()), Err(Error::Dimension(_))));
    }
}
