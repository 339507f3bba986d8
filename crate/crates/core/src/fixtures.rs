//! Built-in designs whose Gram matrix `X'X/n` equals a prescribed `Q` up to
//! rounding, so finite-sample and limit quantities share the same geometry.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{Design, LimitQuantities, RegressionProblem};
use crate::rng::{derive_seed, purpose, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixtureName {
    #[serde(rename = "ORTHO2")]
    Ortho2,
    #[serde(rename = "COLL2")]
    Coll2,
    #[serde(rename = "BLOCK_ORTHO")]
    BlockOrtho,
    #[serde(rename = "P1")]
    P1,
}

impl FixtureName {
    pub const ALL: [FixtureName; 4] = [FixtureName::Ortho2, FixtureName::Coll2, FixtureName::BlockOrtho, FixtureName::P1];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::Ortho2 => "ORTHO2",
            FixtureName::Coll2 => "COLL2",
            FixtureName::BlockOrtho => "BLOCK_ORTHO",
            FixtureName::P1 => "P1",
        }
    }
}

impl fmt::Display for FixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fixture {s:?}; expected one of ORTHO2, COLL2, BLOCK_ORTHO, P1")))
    }
}

/// A complete problem specification: geometry, parameter, noise level,
/// target matrix and general-to-specific critical values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fixture {
    pub name: Option<FixtureName>,
    pub n: usize,
    pub q: DMatrix<f64>,
    pub order_min: usize,
    pub theta: DVector<f64>,
    pub sigma: f64,
    pub a: DMatrix<f64>,
    pub critical: Vec<f64>,
    /// Explicit design matrix; when absent the design is generated from `q`.
    #[serde(skip)]
    pub x: Option<DMatrix<f64>>,
}

impl Fixture {
    pub fn builtin(name: FixtureName) -> Self {
        let (n, q, order_min, theta, a, critical) = match name {
            // Orthogonal pair with X'X = n I.
            FixtureName::Ortho2 => (20, DMatrix::identity(2, 2), 0, vec![0.5, 0.15], DMatrix::identity(2, 2), vec![2.0, 2.0]),
            // Correlated pair.
            FixtureName::Coll2 => {
                (20, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 0, vec![0.5, 0.15], DMatrix::identity(2, 2), vec![2.0, 2.0])
            }
            // The retained regressor is orthogonal to the two that selection
            // may drop, and the target only involves the retained one.
            FixtureName::BlockOrtho => (
                1000,
                DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.5, 1.0]),
                1,
                vec![1.0, 0.3, 0.0],
                DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
                vec![1.96, 1.96],
            ),
            // Single regressor, pre-test at the 5% level.
            FixtureName::P1 => (100, DMatrix::from_element(1, 1, 1.0), 0, vec![0.0], DMatrix::from_element(1, 1, 1.0), vec![1.96]),
        };
        Self { name: Some(name), n, q, order_min, theta: DVector::from_vec(theta), sigma: 1.0, a, critical, x: None }
    }

    /// Wraps an explicit design. `q` defaults to `X'X/n`; the parameter,
    /// target and critical values default to zero, the identity and 1.96.
    pub fn from_design(x: DMatrix<f64>, q: Option<DMatrix<f64>>, order_min: usize) -> Result<Self> {
        let n = x.nrows();
        let dim = x.ncols();
        let q = q.unwrap_or_else(|| x.tr_mul(&x) / n as f64);
        if q.nrows() != dim || q.ncols() != dim {
            return Err(Error::Dimension(format!("Q is {}x{}, design has {dim} columns", q.nrows(), q.ncols())));
        }
        Ok(Self {
            name: None,
            n,
            q,
            order_min,
            theta: DVector::zeros(dim),
            sigma: 1.0,
            a: DMatrix::identity(dim, dim),
            critical: vec![1.96; dim.saturating_sub(order_min)],
            x: Some(x),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_theta(mut self, theta: DVector<f64>) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_a(mut self, a: DMatrix<f64>) -> Self {
        self.a = a;
        self
    }

    pub fn with_critical(mut self, critical: Vec<f64>) -> Self {
        self.critical = critical;
        self
    }

    /// Design with `X'X/n = Q`, generated from `seed`. An explicit design
    /// is returned as is and cannot change its sample size.
    pub fn design(&self, seed: u64) -> Result<Arc<Design>> {
        if let Some(x) = &self.x {
            if x.nrows() != self.n {
                return Err(Error::InvalidArgument(format!(
                    "the design read from file has n = {}, but n = {} was requested",
                    x.nrows(),
                    self.n
                )));
            }
            return Ok(Arc::new(Design::new(x.clone(), Some(self.q.clone()))?));
        }
        Ok(Arc::new(design_with_gram(self.n, &self.q, seed)?))
    }

    pub fn problem(&self, seed: u64) -> Result<RegressionProblem> {
        RegressionProblem::new(self.design(seed)?, self.theta.clone(), self.sigma, self.order_min)
    }

    pub fn limits(&self) -> Result<LimitQuantities> {
        LimitQuantities::new(&self.q, &self.a, self.order_min)
    }
}

/// `X = √n U L'` with `U` an `n × P` matrix of orthonormal columns drawn
/// from `seed` and `L` the Cholesky factor of `Q`, so that `X'X/n = Q`.
/// The returned design records `Q` as its limit Gram matrix.
pub fn design_with_gram(n: usize, q: &DMatrix<f64>, seed: u64) -> Result<Design> {
    let dim = q.nrows();
    if q.ncols() != dim {
        return Err(Error::Dimension(format!("Q is {}x{}", q.nrows(), q.ncols())));
    }
    if n <= dim {
        return Err(Error::InvalidArgument(format!("n = {n} must exceed P = {dim}")));
    }
    let l = q.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Q".into()))?.l();
    let mut rng = stream_rng(derive_seed(seed, &[purpose::DESIGN]), 0);
    let g = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let u = g.qr().q();
    let x = u * l.transpose() * (n as f64).sqrt();
    Design::new(x, Some(q.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_target() {
        for name in FixtureName::ALL {
            let f = Fixture::builtin(name);
            let d = f.design(3).unwrap();
            assert!((d.gram() - &f.q).amax() < 1e-12, "{name}");
            assert_eq!(d.limit_gram(), &f.q);
        }
    }

    #[test]
    fn explicit_design_keeps_its_size() {
        let x = DMatrix::from_fn(10, 2, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0 - 3.0);
        let f = Fixture::from_design(x.clone(), None, 0).unwrap();
        let d = f.design(0).unwrap();
        assert_eq!(d.x(), &x);
        assert!((d.gram() - &f.q).amax() < 1e-12);
        assert!(f.with_n(20).design(0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in FixtureName::ALL {
            assert_eq!(name.as_str().parse::<FixtureName>().unwrap(), name);
            assert_eq!(serde_json::to_string(&name).unwrap(), format!("\"{name}\""));
        }
        assert!("nope".parse::<FixtureName>().is_err());
    }

    #[test]
    fn correlation_gate_matches_geometry() {
        assert_eq!(Fixture::builtin(FixtureName::BlockOrtho).limits().unwrap().q_star, None);
        assert_eq!(Fixture::builtin(FixtureName::P1).limits().unwrap().q_star, Some(1));
        assert_eq!(Fixture::builtin(FixtureName::Coll2).limits().unwrap().q_star, Some(2));
    }
}
