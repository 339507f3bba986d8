//! Linear-model primitives: the fixed design, restricted least squares over
//! the nested family `M_0 ⊆ … ⊆ M_P`, the variance estimate, t-statistics,
//! and the per-order projection quantities (`ξ`, `C`, `b`, `ζ`, `η`) in
//! their finite-sample and limiting versions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, GInverse};

const RANK_REL_TOL: f64 = 1e-10;
const ZETA_CLAMP: f64 = 1e-10;
/// `‖C_∞^{(q)}‖` at or below this counts as zero when locating `q*`.
pub const Q_STAR_TOL: f64 = 1e-10;

/// Non-stochastic design `X` (n × P) with its Gram matrix `X'X/n`, the
/// limit Gram `Q`, and a thin QR factorization shared by all nested fits.
#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    gram: DMatrix<f64>,
    limit_gram: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl Design {
    /// Builds a design; `limit_gram` defaults to `X'X/n`.
    pub fn new(x: DMatrix<f64>, limit_gram: Option<DMatrix<f64>>) -> Result<Self> {
        let (n, p) = x.shape();
        if p < 1 || n <= p {
            return Err(Error::Dimension(format!("design must satisfy n > P >= 1, got n = {n}, P = {p}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite entries".into()));
        }
        if linalg::rank(&x, RANK_REL_TOL) != p {
            return Err(Error::RankDeficient(format!("design has rank below P = {p}")));
        }
        let gram = linalg::symmetrize(&(x.transpose() * &x / n as f64));
        let limit_gram = match limit_gram {
            Some(q) => {
                if q.shape() != (p, p) {
                    return Err(Error::Dimension(format!("Q is {}x{}, expected {p}x{p}", q.nrows(), q.ncols())));
                }
                q
            }
            None => gram.clone(),
        };
        linalg::check_spd(&gram, "X'X/n", 1e-12)?;
        linalg::check_spd(&limit_gram, "Q", 1e-12)?;
        let qr = x.clone().qr();
        let q_factor = qr.q();
        let r_factor = qr.r();
        Ok(Self { x, gram, limit_gram, q_factor, r_factor })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `X'X/n`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Q`, the limit of `X'X/n`.
    pub fn limit_gram(&self) -> &DMatrix<f64> {
        &self.limit_gram
    }

    /// `Q[p:p]` and `Q[p:¬p]` blocks of a Gram-type matrix.
    pub fn blocks(m: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let total = m.ncols();
        (m.view((0, 0), (p, p)).into_owned(), m.view((0, p), (p, total - p)).into_owned())
    }
}

/// The data-generating configuration `Y = Xθ + u`, `u ~ N(0, σ²I)`, with the
/// minimal order `O` of the nested family.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    design: Arc<Design>,
    theta: DVector<f64>,
    sigma: f64,
    order_min: usize,
}

impl RegressionProblem {
    pub fn new(design: Arc<Design>, theta: DVector<f64>, sigma: f64, order_min: usize) -> Result<Self> {
        let p = design.dim();
        if theta.len() != p {
            return Err(Error::Dimension(format!("theta has length {}, expected {p}", theta.len())));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if order_min >= p {
            return Err(Error::InvalidArgument(format!("minimal order O = {order_min} must be below P = {p}")));
        }
        Ok(Self { design, theta, sigma, order_min })
    }

    pub fn design(&self) -> &Arc<Design> {
        &self.design
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn order_min(&self) -> usize {
        self.order_min
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    /// Same design and noise level, different true parameter.
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(self.design.clone(), theta, self.sigma, self.order_min)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.design.clone(), self.theta.clone(), sigma, self.order_min)
    }

    fn check_response(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!("response has length {}, expected {}", y.len(), self.n())));
        }
        Ok(())
    }

    fn check_order(&self, p: usize) -> Result<()> {
        if p > self.dim() {
            return Err(Error::OrderOutOfRange { order: p, max: self.dim() });
        }
        Ok(())
    }

    /// All nested fits of one response, sharing the projection `Q'Y`.
    pub fn fit(&self, y: &DVector<f64>) -> Result<NestedFit> {
        self.check_response(y)?;
        let design = &self.design;
        let n = design.n();
        let p = design.dim();
        let qty = design.q_factor.tr_mul(y);
        let residual = y - &design.q_factor * &qty;
        let rss = residual.norm_squared();
        let sigma_hat = (rss / (n - p) as f64).sqrt();
        Ok(NestedFit { qty, rss, sigma_hat, y_norm: y.norm() })
    }

    /// Restricted least squares `θ̃(p)` under `θ[¬p] = 0`.
    pub fn restricted_ls(&self, y: &DVector<f64>, p: usize) -> Result<DVector<f64>> {
        self.check_order(p)?;
        Ok(self.fit(y)?.estimate(&self.design, p))
    }

    /// `σ̂ = ((n−P)^{-1}‖Y − Xθ̃(P)‖²)^{1/2}`.
    pub fn sigma_hat(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.fit(y)?.sigma_hat)
    }

    /// `(T_0, …, T_P)` with `T_0 = 0`.
    pub fn t_statistics(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let fit = self.fit(y)?;
        fit.check_nondegenerate()?;
        Ok(DVector::from_fn(self.dim() + 1, |p, _| fit.t_stat(&self.design, p)))
    }

    /// `ξ_{n,p}`: square root of the p-th diagonal entry of `(X[p]'X[p]/n)^{-1}`.
    pub fn xi(&self, p: usize) -> Result<f64> {
        if p == 0 || p > self.dim() {
            return Err(Error::OrderOutOfRange { order: p, max: self.dim() });
        }
        Ok(xi_from_r(&self.design, p))
    }

    /// `η_n(p)`, the mean of `θ̃(p)`.
    pub fn eta(&self, p: usize) -> Result<DVector<f64>> {
        self.check_order(p)?;
        Ok(eta_from_gram(self.design.gram(), &self.theta, p))
    }

    /// Finite-sample quantities of order `p ≥ 1` for the linear map `A`.
    pub fn projection_quantities(&self, a: &DMatrix<f64>, p: usize) -> Result<ProjectionQuantities> {
        self.projection_quantities_with(a, p, GInverse::MoorePenrose)
    }

    pub fn projection_quantities_with(&self, a: &DMatrix<f64>, p: usize, ginv: GInverse) -> Result<ProjectionQuantities> {
        if p == 0 || p > self.dim() {
            return Err(Error::OrderOutOfRange { order: p, max: self.dim() });
        }
        check_linear_map(a, self.dim())?;
        let order = OrderQuantities::from_gram(self.design.gram(), a, p, ginv)?;
        let eta = eta_from_gram(self.design.gram(), &self.theta, p);
        Ok(ProjectionQuantities { order, eta })
    }
}

fn xi_from_r(design: &Design, p: usize) -> f64 {
    // (X[p]'X[p]/n)^{-1} = n (R_p'R_p)^{-1}, whose last diagonal entry is n / R_pp².
    let rpp = design.r_factor[(p - 1, p - 1)];
    (design.n() as f64).sqrt() / rpp.abs()
}

/// Per-response summary from which every nested estimate and t-statistic
/// follows in O(P²).
#[derive(Debug, Clone)]
pub struct NestedFit {
    qty: DVector<f64>,
    rss: f64,
    sigma_hat: f64,
    y_norm: f64,
}

impl NestedFit {
    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    /// `RSS` of the nested model `M_p`: the full RSS plus the squared
    /// trailing entries of `Q'Y`.
    pub fn nested_rss(&self, p: usize) -> f64 {
        self.rss + self.qty.rows(p, self.qty.len() - p).norm_squared()
    }

    /// True when the full model fits exactly (σ̂ = 0 up to rounding).
    pub fn is_degenerate(&self) -> bool {
        self.sigma_hat == 0.0 || self.rss.sqrt() <= 1e-12 * self.y_norm
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            return Err(Error::DegenerateSample("full-model residual sum of squares is zero".into()));
        }
        Ok(())
    }

    pub fn estimate(&self, design: &Design, p: usize) -> DVector<f64> {
        let dim = design.dim();
        let mut out = DVector::zeros(dim);
        if p == 0 {
            return out;
        }
        let r = design.r_factor.view((0, 0), (p, p));
        let rhs = self.qty.rows(0, p).into_owned();
        let head = r.solve_upper_triangular(&rhs).expect("R factor of a full-rank design is nonsingular");
        out.rows_mut(0, p).copy_from(&head);
        out
    }

    /// `T_p = √n θ̃_p(p) / (σ̂ ξ_{n,p})`, which reduces to `sign(R_pp)(Q'Y)_p / σ̂`.
    pub fn t_stat(&self, design: &Design, p: usize) -> f64 {
        if p == 0 {
            return 0.0;
        }
        let rpp = design.r_factor[(p - 1, p - 1)];
        rpp.signum() * self.qty[p - 1] / self.sigma_hat
    }
}

fn check_linear_map(a: &DMatrix<f64>, dim: usize) -> Result<()> {
    let k = a.nrows();
    if a.ncols() != dim || k == 0 || k > dim {
        return Err(Error::Dimension(format!("A is {}x{}, expected k x {dim} with 1 <= k <= {dim}", a.nrows(), a.ncols())));
    }
    if linalg::rank(a, RANK_REL_TOL) != k {
        return Err(Error::RankDeficient(format!("A must have full row rank {k}")));
    }
    Ok(())
}

/// `η(p) = (θ[p] + G[p:p]^{-1} G[p:¬p] θ[¬p], 0)` for a Gram-type matrix `G`.
pub fn eta_from_gram(gram: &DMatrix<f64>, theta: &DVector<f64>, p: usize) -> DVector<f64> {
    let dim = theta.len();
    if p == 0 {
        return DVector::zeros(dim);
    }
    if p == dim {
        return theta.clone();
    }
    let (gpp, gpn) = Design::blocks(gram, p);
    let tail = theta.rows(p, dim - p).into_owned();
    let correction = gpp.cholesky().expect("Gram blocks are positive definite").solve(&(gpn * tail));
    let mut out = DVector::zeros(dim);
    for i in 0..p {
        out[i] = theta[i] + correction[i];
    }
    out
}

/// `p_0(θ)`: smallest `p` with `θ_{p+1} = … = θ_P = 0` (exact zeros).
pub fn order_of(theta: &DVector<f64>) -> usize {
    theta.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1)
}

/// Order-`p` quantities derived from a Gram-type matrix `G` (either `X'X/n`
/// or `Q`) and the linear map `A`.
#[derive(Debug, Clone, Serialize)]
pub struct OrderQuantities {
    pub p: usize,
    /// `ξ_p`.
    pub xi: f64,
    /// `C^{(p)} = A[p] G[p:p]^{-1} e_p`.
    pub c: DVector<f64>,
    /// `b_p = C^{(p)'} V_p^-`.
    pub b: DVector<f64>,
    /// `ζ_p ≥ 0` with `ζ_p² = ξ_p² − C'V_p^- C`.
    pub zeta: f64,
    /// Unclamped `ζ_p²`.
    pub zeta_sq: f64,
    /// `V_p = A[p] G[p:p]^{-1} A[p]'`, so that `Φ_p = N(0, σ² V_p)`.
    pub v: DMatrix<f64>,
}

impl OrderQuantities {
    pub fn from_gram(gram: &DMatrix<f64>, a: &DMatrix<f64>, p: usize, ginv: GInverse) -> Result<Self> {
        let gpp = linalg::leading_block(gram, p);
        let inv = linalg::spd_inverse(&gpp, "G[p:p]")?;
        let ap = linalg::leading_columns(a, p);
        let xi_sq = inv[(p - 1, p - 1)];
        let c = &ap * inv.column(p - 1);
        let v = linalg::symmetrize(&(&ap * &inv * ap.transpose()));
        let vg = linalg::generalized_inverse(&v, ginv);
        let b = vg.transpose() * &c;
        let zeta_sq = xi_sq - linalg::quad_form(&c, &vg);
        if zeta_sq < -ZETA_CLAMP * xi_sq.max(1.0) {
            return Err(Error::Singular(format!("negative zeta^2 = {zeta_sq:e} at order {p}")));
        }
        Ok(Self { p, xi: xi_sq.sqrt(), c, b, zeta: zeta_sq.max(0.0).sqrt(), zeta_sq, v })
    }

    /// `b_p z`; only meaningful for `z` in the column space of `A[p]`.
    pub fn b_dot(&self, z: &DVector<f64>) -> f64 {
        self.b.dot(z)
    }
}

/// Finite-sample quantities of order `p` together with `η_n(p)`.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionQuantities {
    pub order: OrderQuantities,
    pub eta: DVector<f64>,
}

/// Limit quantities `ξ_∞`, `C_∞`, `b_∞`, `ζ_∞` for every order `1..=P`,
/// plus `q*`, the largest order above `O` with `C_∞^{(q)} ≠ 0`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitQuantities {
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub order_min: usize,
    pub orders: Vec<OrderQuantities>,
    pub q_star: Option<usize>,
}

impl LimitQuantities {
    pub fn new(q: &DMatrix<f64>, a: &DMatrix<f64>, order_min: usize) -> Result<Self> {
        Self::with_ginverse(q, a, order_min, GInverse::MoorePenrose)
    }

    pub fn with_ginverse(q: &DMatrix<f64>, a: &DMatrix<f64>, order_min: usize, ginv: GInverse) -> Result<Self> {
        let dim = q.nrows();
        linalg::check_spd(q, "Q", 1e-12)?;
        check_linear_map(a, dim)?;
        if order_min >= dim {
            return Err(Error::InvalidArgument(format!("minimal order O = {order_min} must be below P = {dim}")));
        }
        let orders = (1..=dim).map(|p| OrderQuantities::from_gram(q, a, p, ginv)).collect::<Result<Vec<_>>>()?;
        let q_star = ((order_min + 1)..=dim).rev().find(|&p| orders[p - 1].c.norm() > Q_STAR_TOL);
        Ok(Self { q: q.clone(), a: a.clone(), order_min, orders, q_star })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    /// Quantities of order `p`, `1 ≤ p ≤ P`.
    pub fn order(&self, p: usize) -> &OrderQuantities {
        &self.orders[p - 1]
    }

    /// `V_p` with `V_0 = 0` (point mass).
    pub fn v(&self, p: usize) -> DMatrix<f64> {
        if p == 0 {
            DMatrix::zeros(self.k(), self.k())
        } else {
            self.orders[p - 1].v.clone()
        }
    }

    /// Largest absolute deviation of `Σ_r ξ_r^{-2} C_r C_r'` from `A Q^{-1} A'`,
    /// relative to the largest entry of the latter.
    pub fn covariance_identity_residual(&self) -> f64 {
        let k = self.k();
        let mut sum = DMatrix::zeros(k, k);
        for o in &self.orders {
            sum += &o.c * o.c.transpose() / (o.xi * o.xi);
        }
        let full = &self.orders[self.dim() - 1].v;
        (sum - full).amax() / full.amax().max(f64::MIN_POSITIVE)
    }
}
