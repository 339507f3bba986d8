//! Large-sample limit of the cdf under local alternatives `θ + γ/√n`.
//!
//! The primary path evaluates the representation through the Gaussian
//! variables `W_r ~ N(0, σ²ξ_r²)` and `Z_p = Σ_{r≤p} ξ_r^{-2} C_r W_r`:
//! each order contributes `P(Z_p ≤ t + Σ_{r>p} ξ_r^{-2} C_r ν_r,
//! |W_p + ν_p| ≥ c_p σ ξ_p)` times the probability that every larger
//! order is rejected. A second path integrates the conditional
//! probability `1 − Δ_{σζ}(ν_p + b z, c_p σ ξ_p)` against `Φ_{∞,p}` with
//! the shifts `β^{(p)}` taken from their closed form, and serves as an
//! independent cross-check.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist_exact::{Budget, CdfResult, MethodReport};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal::{delta, delta_complement, gaussian_density, norm_pdf, orthant, Estimate};
use crate::quadrature::{integrate_with_breaks, QuadSettings};
use crate::regression::{order_of, Design, LimitQuantities};
use crate::rng::{derive_seed, purpose, stream_rng};
use crate::selection::Critical;
use crate::terms::{GaussianPair, InnerKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalAlternative {
    pub theta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma: f64,
}

impl LocalAlternative {
    pub fn new(theta: DVector<f64>, gamma: DVector<f64>, sigma: f64) -> Result<Self> {
        if theta.len() != gamma.len() {
            return Err(Error::Dimension(format!("theta has length {}, gamma {}", theta.len(), gamma.len())));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { theta, gamma, sigma })
    }

    /// `γ = 0`.
    pub fn fixed(theta: DVector<f64>, sigma: f64) -> Result<Self> {
        let g = DVector::zeros(theta.len());
        Self::new(theta, g, sigma)
    }
}

/// `p* = max(p_0(θ), O)`, the shifts `β^{(p)}` for `p ≥ p*` and the
/// centrings `ν_p` for `p > p*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftConstants {
    pub p_star: usize,
    beta: Vec<DVector<f64>>,
    nu: Vec<f64>,
}

impl ShiftConstants {
    pub fn beta(&self, p: usize) -> &DVector<f64> {
        &self.beta[p - self.p_star]
    }

    pub fn nu(&self, p: usize) -> f64 {
        self.nu[p - self.p_star - 1]
    }

    pub fn dim(&self) -> usize {
        self.p_star + self.nu.len()
    }
}

/// `(Q[p:p]^{-1} Q[p:¬p] γ[¬p])`, the first `p` coordinates of the bias
/// induced by the omitted local parameters.
fn omitted_bias(q: &DMatrix<f64>, gamma: &DVector<f64>, p: usize) -> DVector<f64> {
    let dim = q.nrows();
    let (qpp, qpn) = Design::blocks(q, p);
    let tail = gamma.rows(p, dim - p).into_owned();
    qpp.cholesky().expect("Q blocks are positive definite").solve(&(qpn * tail))
}

pub fn local_shift_constants(limits: &LimitQuantities, alt: &LocalAlternative) -> Result<ShiftConstants> {
    let dim = limits.dim();
    if alt.theta.len() != dim {
        return Err(Error::Dimension(format!("theta has length {}, expected P = {dim}", alt.theta.len())));
    }
    let p_star = order_of(&alt.theta).max(limits.order_min);
    let q = &limits.q;
    let a = &limits.a;
    let gamma = &alt.gamma;
    let beta = (p_star..=dim)
        .map(|p| {
            if p == 0 {
                -(a * gamma)
            } else if p == dim {
                DVector::zeros(a.nrows())
            } else {
                let head = omitted_bias(q, gamma, p);
                let mut full = DVector::zeros(dim);
                full.rows_mut(0, p).copy_from(&head);
                for i in p..dim {
                    full[i] = -gamma[i];
                }
                a * full
            }
        })
        .collect();
    let nu = ((p_star + 1)..=dim).map(|p| if p == dim { gamma[p - 1] } else { gamma[p - 1] + omitted_bias(q, gamma, p)[p - 1] }).collect();
    Ok(ShiftConstants { p_star, beta, nu })
}

/// One summand of the representation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermTrace {
    pub p: usize,
    pub term: f64,
    /// `Π_{q>p} Δ_{σξ_q}(ν_q, c_q σ ξ_q)`.
    pub delta_product: f64,
    /// Orthant probability (smallest order) or joint tail probability.
    pub component: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCdf {
    pub result: CdfResult,
    pub trace: Vec<TermTrace>,
}

fn check_t(limits: &LimitQuantities, t: &DVector<f64>) -> Result<()> {
    if t.len() != limits.k() {
        return Err(Error::Dimension(format!("t has length {}, expected k = {}", t.len(), limits.k())));
    }
    if t.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("t contains NaN".into()));
    }
    Ok(())
}

fn check_critical(limits: &LimitQuantities, crit: &Critical) -> Result<()> {
    if crit.dim() != limits.dim() || crit.order_min() != limits.order_min {
        return Err(Error::Dimension(format!(
            "critical values are for P = {}, O = {}, limit quantities for P = {}, O = {}",
            crit.dim(),
            crit.order_min(),
            limits.dim(),
            limits.order_min
        )));
    }
    Ok(())
}

/// `Δ_{σξ_q}(ν_q, c_q σ ξ_q)` for every order `q > p_star`, indexed by `q`.
fn rejection_factors(limits: &LimitQuantities, nu: &dyn Fn(usize) -> f64, sigma: f64, crit: &Critical, p_star: usize) -> Vec<f64> {
    let dim = limits.dim();
    let mut out = vec![1.0; dim + 1];
    for (q, slot) in out.iter_mut().enumerate().skip(p_star + 1) {
        let xi = limits.order(q).xi;
        *slot = delta(sigma * xi, nu(q), crit.at(q) * sigma * xi);
    }
    out
}

fn product_above(factors: &[f64], p: usize) -> f64 {
    factors[(p + 1)..].iter().product()
}

/// Evaluates the representation for a given `p*`, centrings `ν` (used only
/// above `p*`) and noise level. This is the engine behind both the limit
/// cdf and the plug-in estimator.
pub fn cdf_limit_with_order(
    limits: &LimitQuantities,
    p_star: usize,
    nu: &dyn Fn(usize) -> f64,
    sigma: f64,
    t: &DVector<f64>,
    crit: &Critical,
    budget: &Budget,
) -> Result<LimitCdf> {
    check_t(limits, t)?;
    check_critical(limits, crit)?;
    let dim = limits.dim();
    if p_star > dim || p_star < limits.order_min {
        return Err(Error::OrderOutOfRange { order: p_star, max: dim });
    }
    let k = limits.k();
    let factors = rejection_factors(limits, nu, sigma, crit, p_star);
    // Σ_{r>p} ξ_r^{-2} C_r ν_r for p = p*..P, built from the top down.
    let mut shifts = vec![DVector::zeros(k); dim + 1];
    for p in (p_star..dim).rev() {
        let o = limits.order(p + 1);
        shifts[p] = &shifts[p + 1] + &o.c * (nu(p + 1) / (o.xi * o.xi));
    }

    let mut trace = Vec::with_capacity(dim - p_star + 1);
    let mut error = 0.0;
    let mut kinds = Vec::new();
    let mut inner_samples = None;

    let upper = t + &shifts[p_star];
    let first = if p_star == 0 || sigma == 0.0 {
        Estimate::exact(if upper.iter().all(|&u| u >= 0.0) { 1.0 } else { 0.0 })
    } else {
        let v = &limits.order(p_star).v * (sigma * sigma);
        let e = orthant(&DVector::zeros(k), &v, &upper, Some(budget.orthant_spec(p_star as u64)))?;
        Estimate { value: e.value, error: 3.0 * e.error }
    };
    let prod = product_above(&factors, p_star);
    trace.push(TermTrace { p: p_star, term: first.value * prod, delta_product: prod, component: first.value });
    error += first.error * prod;

    for p in (p_star + 1)..=dim {
        let prod = product_above(&factors, p);
        let o = limits.order(p);
        let upper = t + &shifts[p];
        let thr = crit.at(p) * sigma * o.xi;
        let component = if sigma == 0.0 {
            // Point masses: W_p = 0 and Z_p = 0.
            let hit = upper.iter().all(|&u| u >= 0.0) && nu(p).abs() >= thr;
            Estimate::exact(if hit { 1.0 } else { 0.0 })
        } else {
            let pair = GaussianPair::new(o, sigma);
            let prepared = pair.prepare(&upper, &budget.inner(p as u64), 0)?;
            kinds.push(prepared.kind());
            if let Some(s) = prepared.samples() {
                inner_samples = Some(s);
            }
            let e = prepared.eval(nu(p), thr);
            let scale = if prepared.kind() == InnerKind::Sampling { 3.0 } else { 1.0 };
            Estimate { value: e.value, error: scale * e.error }
        };
        trace.push(TermTrace { p, term: component.value * prod, delta_product: prod, component: component.value });
        error += component.error * prod;
    }
    let raw: f64 = trace.iter().map(|t| t.term).sum();
    let method = MethodReport { outer_evaluations: 0, inner: kinds, inner_samples, seed: budget.seed };
    Ok(LimitCdf { result: CdfResult::from_raw(raw, error, false, method), trace })
}

/// `G_{∞,θ,σ,γ}(t)` through the Gaussian representation.
pub fn cdf_limit(limits: &LimitQuantities, alt: &LocalAlternative, t: &DVector<f64>, crit: &Critical, budget: &Budget) -> Result<LimitCdf> {
    let shifts = local_shift_constants(limits, alt)?;
    cdf_limit_with_order(limits, shifts.p_star, &|p| shifts.nu(p), alt.sigma, t, crit, budget)
}

/// `G_{∞,θ,σ,γ}(t)` by integrating the conditional rejection probability
/// against `Φ_{∞,p}`, with `β^{(p)}` from its closed form. One-dimensional
/// targets use adaptive quadrature, higher dimensions sampling.
pub fn cdf_limit_integral(
    limits: &LimitQuantities,
    alt: &LocalAlternative,
    t: &DVector<f64>,
    crit: &Critical,
    budget: &Budget,
) -> Result<CdfResult> {
    check_t(limits, t)?;
    check_critical(limits, crit)?;
    let shifts = local_shift_constants(limits, alt)?;
    let p_star = shifts.p_star;
    let dim = limits.dim();
    let k = limits.k();
    let sigma = alt.sigma;
    let factors = rejection_factors(limits, &|q| shifts.nu(q), sigma, crit, p_star);

    let mut total = 0.0;
    let mut error = 0.0;
    let mut exhausted = false;
    let mut evaluations = 0;
    let mut kinds = Vec::new();

    let upper = t - shifts.beta(p_star);
    let first = if p_star == 0 {
        Estimate::exact(if upper.iter().all(|&u| u >= 0.0) { 1.0 } else { 0.0 })
    } else {
        let v = &limits.order(p_star).v * (sigma * sigma);
        let e = orthant(&DVector::zeros(k), &v, &upper, Some(budget.orthant_spec(p_star as u64)))?;
        Estimate { value: e.value, error: 3.0 * e.error }
    };
    let prod = product_above(&factors, p_star);
    total += first.value * prod;
    error += first.error * prod;

    for p in (p_star + 1)..=dim {
        let o = limits.order(p);
        let nu = shifts.nu(p);
        let upper = t - shifts.beta(p);
        let thr = crit.at(p) * sigma * o.xi;
        let sz = sigma * o.zeta;
        let integrand_at = |z: &DVector<f64>| delta_complement(sz, nu + o.b.dot(z), thr);
        let est = if k == 1 {
            let var = sigma * sigma * o.v[(0, 0)];
            let u = upper[0];
            if var <= 0.0 {
                kinds.push(InnerKind::ClosedForm);
                let z0 = DVector::zeros(1);
                Estimate::exact(if u >= 0.0 { integrand_at(&z0) } else { 0.0 })
            } else {
                kinds.push(InnerKind::Quadrature);
                let sd = var.sqrt();
                let b = o.b[0];
                let lo = -12.0 * sd;
                let hi = u.min(12.0 * sd);
                let mut breaks = Vec::new();
                if b != 0.0 {
                    breaks.push((thr - nu) / b);
                    breaks.push((-thr - nu) / b);
                }
                let f = |z: f64| norm_pdf(z / sd) / sd * delta_complement(sz, nu + b * z, thr);
                let quad = QuadSettings { abs_tol: budget.inner_tol, max_subdivisions: budget.max_subdivisions };
                let r = integrate_with_breaks(f, lo, hi, &breaks, quad);
                exhausted |= !r.converged;
                evaluations += r.evaluations;
                Estimate { value: r.value.max(0.0), error: r.error + 2e-32 }
            }
        } else {
            kinds.push(InnerKind::Sampling);
            let factor = linalg::psd_factor(&o.v) * sigma;
            let mut rng = stream_rng(derive_seed(budget.seed, &[purpose::LIMIT_SAMPLING, p as u64]), 0);
            let draws = budget.inner_samples.max(1);
            let mut sum = 0.0;
            let mut eps = DVector::zeros(k);
            for _ in 0..draws {
                for e in eps.iter_mut() {
                    *e = rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
                }
                let z = &factor * &eps;
                if (0..k).all(|i| z[i] <= upper[i]) {
                    sum += integrand_at(&z);
                }
            }
            let m = sum / draws as f64;
            Estimate { value: m, error: 3.0 * (m * (1.0 - m) / draws as f64).sqrt() }
        };
        let prod = product_above(&factors, p);
        total += est.value * prod;
        error += est.error * prod;
    }
    let method = MethodReport {
        outer_evaluations: evaluations,
        inner: kinds,
        inner_samples: if k == 1 { None } else { Some(budget.inner_samples) },
        seed: budget.seed,
    };
    Ok(CdfResult::from_raw(total, error, exhausted, method))
}

/// Lebesgue density of `G_{∞,θ,σ,γ}` at `t`; requires `p* > 0` and `A[p*]`
/// of full row rank.
pub fn pdf_limit(limits: &LimitQuantities, alt: &LocalAlternative, t: &DVector<f64>, crit: &Critical) -> Result<f64> {
    check_t(limits, t)?;
    check_critical(limits, crit)?;
    let shifts = local_shift_constants(limits, alt)?;
    let p_star = shifts.p_star;
    if p_star == 0 {
        return Err(Error::DensityUndefined("the smallest selectable model is empty (p* = 0)".into()));
    }
    let k = limits.k();
    let a_star = linalg::leading_columns(&limits.a, p_star);
    if linalg::rank(&a_star, 1e-10) < k {
        return Err(Error::DensityUndefined(format!("A[{p_star}] does not have full row rank {k}")));
    }
    let sigma = alt.sigma;
    let dim = limits.dim();
    let factors = rejection_factors(limits, &|q| shifts.nu(q), sigma, crit, p_star);
    let s2 = sigma * sigma;
    let mut total = gaussian_density(&(&limits.order(p_star).v * s2), &(t - shifts.beta(p_star)))? * product_above(&factors, p_star);
    for p in (p_star + 1)..=dim {
        let o = limits.order(p);
        let z = t - shifts.beta(p);
        let reject = delta_complement(sigma * o.zeta, shifts.nu(p) + o.b.dot(&z), crit.at(p) * sigma * o.xi);
        total += reject * gaussian_density(&(&o.v * s2), &z)? * product_above(&factors, p);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub gamma: DVector<f64>,
    pub value: f64,
    pub abs_error: f64,
}

/// Values of `γ ↦ G_{∞,θ,σ,γ}(t)` over a grid and their oscillation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonconstancyScan {
    pub q_star: Option<usize>,
    pub points: Vec<ScanPoint>,
    pub oscillation: f64,
    pub argmax: usize,
    pub argmin: usize,
    /// Combined numerical error of the two extreme values.
    pub abs_error: f64,
}

pub fn limit_nonconstancy_scan(
    limits: &LimitQuantities,
    theta: &DVector<f64>,
    sigma: f64,
    t: &DVector<f64>,
    crit: &Critical,
    gamma_grid: &[DVector<f64>],
    budget: &Budget,
) -> Result<NonconstancyScan> {
    if gamma_grid.is_empty() {
        return Err(Error::InvalidArgument("gamma grid is empty".into()));
    }
    if let Some(q) = limits.q_star {
        if let Some(g) = gamma_grid.iter().find(|g| g.iter().skip(q).any(|&v| v != 0.0)) {
            return Err(Error::InvalidArgument(format!("gamma {:?} is not in M_{q}", g.as_slice())));
        }
    }
    let points = gamma_grid
        .iter()
        .map(|g| {
            let alt = LocalAlternative::new(theta.clone(), g.clone(), sigma)?;
            let r = cdf_limit(limits, &alt, t, crit, budget)?.result;
            Ok(ScanPoint { gamma: g.clone(), value: r.value, abs_error: r.abs_error })
        })
        .collect::<Result<Vec<_>>>()?;
    let argmax = (0..points.len()).max_by(|&i, &j| points[i].value.total_cmp(&points[j].value)).unwrap_or(0);
    let argmin = (0..points.len()).min_by(|&i, &j| points[i].value.total_cmp(&points[j].value)).unwrap_or(0);
    Ok(NonconstancyScan {
        q_star: limits.q_star,
        oscillation: points[argmax].value - points[argmin].value,
        abs_error: points[argmax].abs_error + points[argmin].abs_error,
        argmax,
        argmin,
        points,
    })
}

/// One draw of `(W_1..W_P)` and `(Z_1..Z_P)` from the representation:
/// independent `W_r ~ N(0, σ²ξ_r²)` and `Z_p = Σ_{r≤p} ξ_r^{-2} C_r W_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationDraw {
    pub w: Vec<f64>,
    pub z: Vec<DVector<f64>>,
}

pub fn sample_representation<R: rand::Rng + ?Sized>(limits: &LimitQuantities, sigma: f64, rng: &mut R) -> RepresentationDraw {
    let mut w = Vec::with_capacity(limits.dim());
    let mut z = Vec::with_capacity(limits.dim());
    let mut acc = DVector::zeros(limits.k());
    for o in &limits.orders {
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        let wr = sigma * o.xi * e;
        acc += &o.c * (wr / (o.xi * o.xi));
        w.push(wr);
        z.push(acc.clone());
    }
    RepresentationDraw { w, z }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1_limits() -> (LimitQuantities, Critical) {
        let one = DMatrix::from_element(1, 1, 1.0);
        (LimitQuantities::new(&one, &one, 0).unwrap(), Critical::new(&[1.96], 0, 1).unwrap())
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_regressor_value_at_origin() {
        let (l, c) = p1_limits();
        let alt = LocalAlternative::fixed(v(&[0.0]), 1.0).unwrap();
        let r = cdf_limit(&l, &alt, &v(&[0.0]), &c, &Budget::default()).unwrap();
        // 0.95 from the empty model plus P(W ≤ 0, |W| ≥ 1.96).
        let want = delta(1.0, 0.0, 1.96) + crate::normal::norm_cdf(-1.96);
        assert!((r.result.value - want).abs() < 1e-14);
        assert!((r.result.value - 0.975).abs() < 1e-4);
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn nonzero_parameter_gives_gaussian() {
        let (l, c) = p1_limits();
        let alt = LocalAlternative::fixed(v(&[0.3]), 2.0).unwrap();
        let r = cdf_limit(&l, &alt, &v(&[1.0]), &c, &Budget::default()).unwrap();
        assert!((r.result.value - crate::normal::norm_cdf(0.5)).abs() < 1e-15);
    }

    #[test]
    fn large_local_parameter_approaches_half() {
        let (l, c) = p1_limits();
        for g in [-50.0, 50.0] {
            let alt = LocalAlternative::new(v(&[0.0]), v(&[g]), 1.0).unwrap();
            let r = cdf_limit(&l, &alt, &v(&[0.0]), &c, &Budget::default()).unwrap();
            assert!((r.result.value - 0.5).abs() < 1e-10, "gamma = {g}: {}", r.result.value);
        }
    }

    #[test]
    fn shift_constants_for_correlated_pair() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = DMatrix::identity(2, 2);
        let l = LimitQuantities::new(&q, &a, 0).unwrap();
        let alt = LocalAlternative::new(v(&[0.0, 0.0]), v(&[0.0, 1.0]), 1.0).unwrap();
        let s = local_shift_constants(&l, &alt).unwrap();
        assert_eq!(s.p_star, 0);
        assert!((s.nu(1) - 0.5).abs() < 1e-15);
        assert!((s.nu(2) - 1.0).abs() < 1e-15);
        assert!((s.beta(1) - v(&[0.5, -1.0])).amax() < 1e-15);
        assert!((s.beta(0) - v(&[0.0, -1.0])).amax() < 1e-15);
        assert_eq!(s.beta(2), &v(&[0.0, 0.0]));
        // β^{(p)} = −Σ_{r>p} ξ_r^{-2} C_r ν_r.
        for p in 0..2 {
            let mut sum = DVector::zeros(2);
            for r in (p + 1)..=2 {
                let o = l.order(r);
                sum += &o.c * (s.nu(r) / (o.xi * o.xi));
            }
            assert!((s.beta(p) + sum).amax() < 1e-14, "p = {p}");
        }
    }

    #[test]
    fn zero_gamma_gives_zero_shifts() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let l = LimitQuantities::new(&q, &DMatrix::identity(2, 2), 0).unwrap();
        let s = local_shift_constants(&l, &LocalAlternative::fixed(v(&[0.0, 0.0]), 1.0).unwrap()).unwrap();
        for p in 0..=2 {
            assert_eq!(s.beta(p).amax(), 0.0);
        }
        assert_eq!(s.nu(1), 0.0);
    }

    #[test]
    fn integral_path_matches_representation() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let l = LimitQuantities::new(&q, &a, 0).unwrap();
        let c = Critical::new(&[2.0, 2.0], 0, 2).unwrap();
        for (theta, gamma, t) in [([0.0, 0.0], [0.4, -1.0], 0.3), ([1.0, 0.0], [0.0, 0.7], -0.5), ([0.0, 0.0], [0.0, 0.0], 0.0)] {
            let alt = LocalAlternative::new(v(&theta), v(&gamma), 1.3).unwrap();
            let x = cdf_limit(&l, &alt, &v(&[t]), &c, &Budget::default()).unwrap().result;
            let y = cdf_limit_integral(&l, &alt, &v(&[t]), &c, &Budget::default()).unwrap();
            assert!((x.value - y.value).abs() < 1e-8, "{theta:?} {gamma:?}: {} vs {}", x.value, y.value);
        }
    }

    #[test]
    fn representation_sampler_reproduces_covariances() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let l = LimitQuantities::new(&q, &DMatrix::identity(2, 2), 0).unwrap();
        let sigma = 1.5;
        let mut rng = stream_rng(11, 0);
        let n = 400_000;
        let mut zw = [[0.0; 2]; 2];
        let mut zz = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let d = sample_representation(&l, sigma, &mut rng);
            for (r, w) in d.w.iter().enumerate() {
                for i in 0..2 {
                    zw[r][i] += d.z[1][i] * w;
                }
            }
            zz += &d.z[1] * d.z[1].transpose();
        }
        for r in 0..2 {
            let c = &l.order(r + 1).c;
            for i in 0..2 {
                let got = zw[r][i] / n as f64;
                assert!((got - sigma * sigma * c[i]).abs() < 0.02, "r = {r}, i = {i}: {got}");
            }
        }
        let v = &l.order(2).v * (sigma * sigma);
        assert!((zz / n as f64 - v).amax() < 0.03);
    }

    #[test]
    fn density_requires_nonempty_smallest_model() {
        let (l, c) = p1_limits();
        let alt = LocalAlternative::fixed(v(&[0.0]), 1.0).unwrap();
        assert!(matches!(pdf_limit(&l, &alt, &v(&[0.0]), &c), Err(Error::DensityUndefined(_))));
    }

    #[test]
    fn scan_reports_oscillation() {
        let (l, c) = p1_limits();
        let grid: Vec<DVector<f64>> = [0.0, 1.0, -1.0, 2.0, -2.0, 50.0, -50.0].iter().map(|&g| v(&[g])).collect();
        let s = limit_nonconstancy_scan(&l, &v(&[0.0]), 1.0, &v(&[0.0]), &c, &grid, &Budget::default()).unwrap();
        assert!(s.oscillation >= 0.4);
        assert_eq!(s.argmax, 0);
    }
}
