//! Joint probabilities `P(Z ≤ u, |W + a| ≥ τ)` for a Gaussian pair with
//! `Var Z = σ²V`, `Cov(Z, W) = σ²C` and `Var W = σ²ξ²`.
//!
//! These are the building blocks of every term of the exact and limiting
//! cdf formulas. Conditioning on the standardized `x = W/(σξ)` leaves
//! `Z = m x + R` with `R` independent of `x`. Coordinates of `R` that vanish
//! turn into interval constraints on `x`, so the probability reduces to a
//! one-dimensional integral of an orthant probability of the remaining
//! coordinates. With at most one remaining coordinate the integral has a
//! bivariate normal closed form, with two it is done by adaptive quadrature,
//! and with more the conditional law `W | Z = z ~ N(b z, σ²ζ²)` is averaged
//! over sampled `z`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::normal::{bvn_lower, delta_complement, norm_cdf, norm_pdf, norm_sf, Estimate};
use crate::quadrature::{integrate, QuadSettings};
use crate::regression::OrderQuantities;
use crate::rng::stream_rng;

/// A conditional variance at or below this fraction of the unconditional
/// one marks the coordinate as an exact linear function of `W`.
const CONDITIONAL_DEGENERACY: f64 = 1e-10;
/// Standardized range over which the conditioning variable is integrated.
const X_RANGE: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Closed form or quadrature when at most two coordinates remain after
    /// conditioning, sampling otherwise.
    #[default]
    Auto,
    /// Always average the conditional probability over sampled `z`.
    Sampling,
}

/// How a prepared joint probability is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    ClosedForm,
    Quadrature,
    Sampling,
}

#[derive(Debug, Clone, Copy)]
pub struct InnerSettings {
    pub method: InnerMethod,
    pub samples: usize,
    pub quad: QuadSettings,
    pub seed: u64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self { method: InnerMethod::Auto, samples: 100_000, quad: QuadSettings { abs_tol: 1e-11, max_subdivisions: 200 }, seed: 0 }
    }
}

/// The pair `(Z, W)` of one order together with its conditional structure.
#[derive(Debug, Clone)]
pub struct GaussianPair {
    sigma: f64,
    xi: f64,
    zeta: f64,
    v: DMatrix<f64>,
    b: DVector<f64>,
    m: DVector<f64>,
    r_cov: DMatrix<f64>,
    kind: Vec<CoordKind>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CoordKind {
    /// `Z_i ≡ 0`.
    Null,
    /// `Z_i = m_i x` exactly.
    Linear,
    /// `Z_i` keeps a non-degenerate conditional component.
    Active,
}

impl GaussianPair {
    pub fn new(order: &OrderQuantities, sigma: f64) -> Self {
        let k = order.c.len();
        let s2 = sigma * sigma;
        let m = &order.c * (sigma / order.xi);
        let r_cov = linalg::symmetrize(&((&order.v - &order.c * order.c.transpose() / (order.xi * order.xi)) * s2));
        let scale = (0..k).map(|i| s2 * order.v[(i, i)]).fold(0.0, f64::max);
        let kind = (0..k)
            .map(|i| {
                let var = s2 * order.v[(i, i)];
                if var <= 1e-24 * scale {
                    CoordKind::Null
                } else if r_cov[(i, i)] <= CONDITIONAL_DEGENERACY * var {
                    CoordKind::Linear
                } else {
                    CoordKind::Active
                }
            })
            .collect();
        Self { sigma, xi: order.xi, zeta: order.zeta, v: order.v.clone(), b: order.b.clone(), m, r_cov, kind }
    }

    pub fn k(&self) -> usize {
        self.kind.len()
    }

    /// Number of coordinates that stay random after conditioning on `W`.
    pub fn active_dim(&self) -> usize {
        self.kind.iter().filter(|&&k| k == CoordKind::Active).count()
    }

    /// Fixes the upper bound `u` and precomputes what every later
    /// evaluation at different `(a, τ)` can share.
    pub fn prepare(&self, upper: &DVector<f64>, settings: &InnerSettings, stream: u64) -> Result<PreparedTail> {
        if upper.len() != self.k() {
            return Err(Error::Dimension(format!("upper bound has length {}, expected {}", upper.len(), self.k())));
        }
        if upper.iter().any(|u| u.is_nan()) {
            return Err(Error::InvalidArgument("upper bound contains NaN".into()));
        }
        if upper.iter().any(|&u| u == f64::NEG_INFINITY) {
            return Ok(PreparedTail(Prepared::Empty));
        }
        let use_sampling = settings.method == InnerMethod::Sampling || self.active_dim() > 2;
        if use_sampling {
            return Ok(self.prepare_sampled(upper, settings, stream));
        }
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut active = Vec::new();
        for i in 0..self.k() {
            let u = upper[i];
            if u == f64::INFINITY {
                continue;
            }
            match self.kind[i] {
                CoordKind::Null => {
                    if u < 0.0 {
                        return Ok(PreparedTail(Prepared::Empty));
                    }
                }
                CoordKind::Linear => {
                    let mi = self.m[i];
                    if mi > 0.0 {
                        hi = hi.min(u / mi);
                    } else {
                        lo = lo.max(u / mi);
                    }
                }
                CoordKind::Active => active.push(i),
            }
        }
        if lo >= hi {
            return Ok(PreparedTail(Prepared::Empty));
        }
        let sigma_w = self.sigma * self.xi;
        let body = match active.len() {
            0 => Conditional::None,
            1 => {
                let i = active[0];
                let total_sd = (self.r_cov[(i, i)] + self.m[i] * self.m[i]).sqrt();
                Conditional::One { h: upper[i] / total_sd, rho: (self.m[i] / total_sd).clamp(-1.0, 1.0) }
            }
            _ => {
                let (i, j) = (active[0], active[1]);
                let si = self.r_cov[(i, i)].sqrt();
                let sj = self.r_cov[(j, j)].sqrt();
                Conditional::Two {
                    u: [upper[i], upper[j]],
                    m: [self.m[i], self.m[j]],
                    sd: [si, sj],
                    rho: (self.r_cov[(i, j)] / (si * sj)).clamp(-1.0, 1.0),
                    quad: settings.quad,
                }
            }
        };
        Ok(PreparedTail(Prepared::Deterministic { lo, hi, sigma_w, body }))
    }

    fn prepare_sampled(&self, upper: &DVector<f64>, settings: &InnerSettings, stream: u64) -> PreparedTail {
        let k = self.k();
        let factor = linalg::psd_factor(&self.v) * self.sigma;
        let mut rng = stream_rng(settings.seed, stream);
        let total = settings.samples.max(1);
        let mut bz = Vec::new();
        let mut eps = DVector::zeros(k);
        for _ in 0..total {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            let z = &factor * &eps;
            let accepted = (0..k).all(|i| {
                let zi = if self.kind[i] == CoordKind::Null { 0.0 } else { z[i] };
                zi <= upper[i]
            });
            if accepted {
                bz.push(self.b.dot(&z));
            }
        }
        PreparedTail(Prepared::Sampled { bz, total, sigma_zeta: self.sigma * self.zeta })
    }
}

#[derive(Debug, Clone)]
enum Conditional {
    None,
    One { h: f64, rho: f64 },
    Two { u: [f64; 2], m: [f64; 2], sd: [f64; 2], rho: f64, quad: QuadSettings },
}

/// A joint probability with the upper bound fixed; see [`GaussianPair::prepare`].
#[derive(Debug, Clone)]
pub struct PreparedTail(Prepared);

#[derive(Debug, Clone)]
enum Prepared {
    Empty,
    Deterministic { lo: f64, hi: f64, sigma_w: f64, body: Conditional },
    Sampled { bz: Vec<f64>, total: usize, sigma_zeta: f64 },
}

impl PreparedTail {
    pub fn kind(&self) -> InnerKind {
        match &self.0 {
            Prepared::Empty => InnerKind::ClosedForm,
            Prepared::Deterministic { body: Conditional::Two { .. }, .. } => InnerKind::Quadrature,
            Prepared::Deterministic { .. } => InnerKind::ClosedForm,
            Prepared::Sampled { .. } => InnerKind::Sampling,
        }
    }

    pub fn samples(&self) -> Option<usize> {
        match &self.0 {
            Prepared::Sampled { total, .. } => Some(*total),
            _ => None,
        }
    }

    /// `P(Z ≤ u)`.
    pub fn orthant(&self) -> Estimate {
        self.eval(0.0, 0.0)
    }

    /// `P(Z ≤ u, |W + shift| ≥ thr)`. The error is a quadrature bound for
    /// the deterministic paths and one standard error when sampling.
    pub fn eval(&self, shift: f64, thr: f64) -> Estimate {
        match &self.0 {
            Prepared::Empty => Estimate::exact(0.0),
            Prepared::Deterministic { lo, hi, sigma_w, body } => {
                if thr <= 0.0 {
                    return body.mass(*lo, *hi);
                }
                let left = (-thr - shift) / sigma_w;
                let right = (thr - shift) / sigma_w;
                let a = body.mass(*lo, hi.min(left));
                let b = body.mass(lo.max(right), *hi);
                Estimate { value: a.value + b.value, error: a.error + b.error }
            }
            Prepared::Sampled { bz, total, sigma_zeta } => {
                let sum: f64 = bz.iter().map(|&v| delta_complement(*sigma_zeta, shift + v, thr)).sum();
                let n = *total as f64;
                let p = sum / n;
                Estimate { value: p, error: (p * (1.0 - p) / n).sqrt() }
            }
        }
    }
}

impl Conditional {
    /// `P(x ∈ [a, b], R ≤ u − m x)` for standard normal `x`.
    fn mass(&self, a: f64, b: f64) -> Estimate {
        if !(b > a) {
            return Estimate::exact(0.0);
        }
        match self {
            Conditional::None => {
                let v = if a >= 0.0 { norm_sf(a) - norm_sf(b) } else { norm_cdf(b) - norm_cdf(a) };
                Estimate::exact(v.max(0.0))
            }
            Conditional::One { h, rho } => {
                let v = bvn_lower(b, *h, *rho) - bvn_lower(a, *h, *rho);
                Estimate::exact(v.max(0.0))
            }
            Conditional::Two { u, m, sd, rho, quad } => {
                let a = a.max(-X_RANGE);
                let b = b.min(X_RANGE);
                if !(b > a) {
                    return Estimate::exact(0.0);
                }
                let f = |x: f64| {
                    let h = (u[0] - m[0] * x) / sd[0];
                    let k = (u[1] - m[1] * x) / sd[1];
                    norm_pdf(x) * bvn_lower(h, k, *rho)
                };
                let r = integrate(f, a, b, *quad);
                Estimate { value: r.value.max(0.0), error: r.error + 2.0 * norm_sf(X_RANGE) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::GInverse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn order_from(q: &[f64], a: &[f64], dim: usize, k: usize, p: usize) -> OrderQuantities {
        let q = DMatrix::from_row_slice(dim, dim, q);
        let a = DMatrix::from_row_slice(k, dim, a);
        OrderQuantities::from_gram(&q, &a, p, GInverse::MoorePenrose).unwrap()
    }

    /// Brute-force oracle: draw the full coefficient vector and test the event.
    #[allow(clippy::too_many_arguments)]
    fn brute(q: &[f64], a: &[f64], dim: usize, k: usize, p: usize, sigma: f64, u: &[f64], shift: f64, thr: f64) -> (f64, f64) {
        let qm = DMatrix::from_row_slice(dim, dim, q);
        let am = DMatrix::from_row_slice(k, dim, a);
        let inv = linalg::leading_block(&qm, p).cholesky().unwrap().inverse();
        let l = inv.clone().cholesky().unwrap().l() * sigma;
        let ap = linalg::leading_columns(&am, p);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 400_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let e = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let g = &l * e;
            let z = &ap * &g;
            let w = g[p - 1];
            if (0..k).all(|i| z[i] <= u[i]) && (w + shift).abs() >= thr {
                hits += 1;
            }
        }
        let ph = hits as f64 / n as f64;
        (ph, (ph * (1.0 - ph) / n as f64).sqrt())
    }

    #[test]
    fn matches_brute_force_in_each_regime() {
        let coll = [1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0];
        // (A, k, p) triples covering zero, one and two active coordinates.
        let cases: Vec<(Vec<f64>, usize, usize)> = vec![
            (vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 2),
            (vec![1.0, 0.0, 0.0], 1, 3),
            (vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 3),
            (vec![0.0, 0.0, 1.0], 1, 3),
        ];
        for (a, k, p) in cases {
            let order = order_from(&coll, &a, 3, k, p);
            let pair = GaussianPair::new(&order, 1.3);
            let u: Vec<f64> = [0.4, -0.2][..k].to_vec();
            let prepared = pair.prepare(&DVector::from_column_slice(&u), &InnerSettings::default(), 0).unwrap();
            for &(shift, thr) in &[(0.3, 1.5), (-1.0, 0.5), (0.0, 0.0)] {
                let got = prepared.eval(shift, thr);
                let (want, se) = brute(&coll, &a, 3, k, p, 1.3, &u, shift, thr);
                assert!(
                    (got.value - want).abs() <= 4.0 * se + got.error + 1e-12,
                    "A={a:?} p={p} shift={shift} thr={thr}: {} vs {want} (se {se}, active {})",
                    got.value,
                    pair.active_dim()
                );
            }
        }
    }

    #[test]
    fn sampling_agrees_with_deterministic() {
        let coll = [1.0, 0.5, 0.5, 1.0];
        let order = order_from(&coll, &[1.0, 0.0, 0.0, 1.0], 2, 2, 2);
        let pair = GaussianPair::new(&order, 1.0);
        let u = DVector::from_vec(vec![0.5, 0.1]);
        let det = pair.prepare(&u, &InnerSettings::default(), 0).unwrap();
        let settings = InnerSettings { method: InnerMethod::Sampling, samples: 200_000, seed: 5, ..Default::default() };
        let smp = pair.prepare(&u, &settings, 0).unwrap();
        assert_eq!(smp.kind(), InnerKind::Sampling);
        for &(shift, thr) in &[(0.0, 2.0), (1.0, 1.0)] {
            let a = det.eval(shift, thr);
            let b = smp.eval(shift, thr);
            assert!((a.value - b.value).abs() <= 4.0 * b.error + 1e-9, "{} vs {}", a.value, b.value);
        }
    }

    #[test]
    fn no_threshold_gives_orthant() {
        let q = [1.0, 0.3, 0.3, 1.0];
        let order = order_from(&q, &[1.0, 0.0], 2, 1, 2);
        let pair = GaussianPair::new(&order, 2.0);
        let u = DVector::from_vec(vec![0.7]);
        let prepared = pair.prepare(&u, &InnerSettings::default(), 0).unwrap();
        let want = norm_cdf(0.7 / (2.0 * order.v[(0, 0)].sqrt()));
        assert!((prepared.orthant().value - want).abs() < 1e-14);
    }

    #[test]
    fn impossible_bounds_give_zero() {
        let order = order_from(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0], 2, 1, 2);
        let pair = GaussianPair::new(&order, 1.0);
        let prepared = pair.prepare(&DVector::from_vec(vec![f64::NEG_INFINITY]), &InnerSettings::default(), 0).unwrap();
        assert_eq!(prepared.eval(0.0, 1.0).value, 0.0);
    }
}
