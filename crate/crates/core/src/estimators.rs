//! Data-driven estimators of the finite-sample cdf.
//!
//! `Ǧ_n` plugs the sample Gram matrix, `σ̂` and a consistently estimated
//! order into the limit formula with `γ = 0`. `Φ̂_{n,p}` is the Gaussian
//! cdf of the order-`p` least-squares estimator with `σ̂` in place of `σ`;
//! it is consistent when the target is asymptotically uncorrelated with
//! every coefficient estimate that selection can drop.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist_exact::{Budget, CdfResult, MethodReport};
use crate::dist_limit::cdf_limit_with_order;
use crate::error::{Error, Result};
use crate::normal::{orthant, SamplingSpec};
use crate::regression::{LimitQuantities, NestedFit, RegressionProblem};
use crate::rng::{derive_seed, purpose};
use crate::selection::{auxiliary_from_fit, AuxiliaryRule, Critical};

/// What `Ǧ_n` plugged in for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlugInState {
    pub p_bar: usize,
    /// `max(p̄, O)`.
    pub p_eff: usize,
    pub sigma_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlugInEstimate {
    pub state: PlugInState,
    pub value: CdfResult,
}

/// `Ǧ_n` and `Φ̂_{n,p}` for a fixed design and target matrix `A`. The
/// plugged finite-sample quantities depend only on the design, so they are
/// computed once and shared across responses.
#[derive(Debug, Clone)]
pub struct PlugInEstimator {
    problem: RegressionProblem,
    plugged: LimitQuantities,
    critical: Critical,
    auxiliary: AuxiliaryRule,
    budget: Budget,
}

impl PlugInEstimator {
    pub fn new(problem: &RegressionProblem, a: &DMatrix<f64>, critical: &[f64], auxiliary: AuxiliaryRule, budget: Budget) -> Result<Self> {
        budget.validate()?;
        let plugged = LimitQuantities::new(problem.design().gram(), a, problem.order_min())?;
        let critical = Critical::new(critical, problem.order_min(), problem.dim())?;
        Ok(Self { problem: problem.clone(), plugged, critical, auxiliary, budget })
    }

    pub fn problem(&self) -> &RegressionProblem {
        &self.problem
    }

    pub fn k(&self) -> usize {
        self.plugged.k()
    }

    /// `p̄`, `max(p̄, O)` and `σ̂`; a degenerate sample has no `p̄` and
    /// reports zero for both orders.
    pub fn state(&self, fit: &NestedFit) -> Result<PlugInState> {
        if fit.is_degenerate() {
            return Ok(PlugInState { p_bar: 0, p_eff: self.problem.order_min(), sigma_hat: 0.0 });
        }
        let p_bar = auxiliary_from_fit(&self.problem, fit, self.auxiliary)?;
        Ok(PlugInState { p_bar, p_eff: p_bar.max(self.problem.order_min()), sigma_hat: fit.sigma_hat() })
    }

    fn check_t(&self, t: &DVector<f64>) -> Result<()> {
        if t.len() != self.k() {
            return Err(Error::Dimension(format!("t has length {}, expected k = {}", t.len(), self.k())));
        }
        Ok(())
    }

    /// `Ǧ_n(t)` from an already computed fit. When `σ̂ = 0` every plugged
    /// Gaussian collapses and the estimate is the point mass `1{t ≥ 0}`.
    pub fn g_check_fit(&self, fit: &NestedFit, t: &DVector<f64>) -> Result<PlugInEstimate> {
        self.check_t(t)?;
        let state = self.state(fit)?;
        if state.sigma_hat == 0.0 {
            let value = if t.iter().all(|&v| v >= 0.0) { 1.0 } else { 0.0 };
            let method = MethodReport { outer_evaluations: 0, inner: Vec::new(), inner_samples: None, seed: self.budget.seed };
            return Ok(PlugInEstimate { state, value: CdfResult::from_raw(value, 0.0, false, method) });
        }
        let r = cdf_limit_with_order(&self.plugged, state.p_eff, &|_| 0.0, state.sigma_hat, t, &self.critical, &self.budget)?;
        Ok(PlugInEstimate { state, value: r.result })
    }

    pub fn g_check(&self, y: &DVector<f64>, t: &DVector<f64>) -> Result<PlugInEstimate> {
        let fit = self.problem.fit(y)?;
        self.g_check_fit(&fit, t)
    }

    /// `Φ̂_{n,p}(t)`: the cdf of `N(0, σ̂² A[p](X[p]'X[p]/n)^{-1}A[p]')`,
    /// a point mass at zero for `p = 0`.
    pub fn phi_hat_fit(&self, fit: &NestedFit, p: usize, t: &DVector<f64>) -> Result<f64> {
        self.check_t(t)?;
        if p > self.problem.dim() {
            return Err(Error::OrderOutOfRange { order: p, max: self.problem.dim() });
        }
        fit.check_nondegenerate()?;
        if p == 0 {
            return Ok(if t.iter().all(|&v| v >= 0.0) { 1.0 } else { 0.0 });
        }
        let s = fit.sigma_hat();
        let cov = &self.plugged.order(p).v * (s * s);
        let spec = SamplingSpec {
            samples: self.budget.orthant_samples,
            seed: derive_seed(self.budget.seed, &[purpose::ORTHANT, p as u64]),
            stream: 0,
        };
        Ok(orthant(&DVector::zeros(self.k()), &cov, t, Some(spec))?.value)
    }

    pub fn phi_hat(&self, y: &DVector<f64>, p: usize, t: &DVector<f64>) -> Result<f64> {
        let fit = self.problem.fit(y)?;
        self.phi_hat_fit(&fit, p, t)
    }
}

/// One-shot `Ǧ_n(t)` for the general-to-specific rule with the given
/// critical values.
pub fn g_check(
    problem: &RegressionProblem,
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    t: &DVector<f64>,
    critical: &[f64],
    auxiliary: AuxiliaryRule,
    budget: &Budget,
) -> Result<PlugInEstimate> {
    PlugInEstimator::new(problem, a, critical, auxiliary, *budget)?.g_check(y, t)
}

/// One-shot `Φ̂_{n,p}(t)`.
pub fn phi_hat(problem: &RegressionProblem, y: &DVector<f64>, a: &DMatrix<f64>, p: usize, t: &DVector<f64>) -> Result<f64> {
    let plugged = LimitQuantities::new(problem.design().gram(), a, problem.order_min())?;
    let critical = vec![1.0; problem.dim() - problem.order_min()];
    let est = PlugInEstimator {
        problem: problem.clone(),
        critical: Critical::new(&critical, problem.order_min(), problem.dim())?,
        plugged,
        auxiliary: AuxiliaryRule::default(),
        budget: Budget::default(),
    };
    est.phi_hat(y, p, t)
}
