//! Run configuration read from JSON. Unknown keys are rejected and every
//! value is validated before any computation starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist_exact::Budget;
use crate::error::{Error, Result};
use crate::experiments::{matrix_from_rows, AuditSettings, Context, ImpossibilitySettings, TubeSettings, UniformSettings};
use crate::fixtures::{Fixture, FixtureName};
use crate::regression::{Design, RegressionProblem};
use crate::selection::{AuxiliaryRule, SelectionRule};

/// Where the design comes from, plus overrides of the fixture's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub builtin: Option<FixtureName>,
    /// Headerless CSV with one row per observation and one column per regressor.
    pub design_csv: Option<PathBuf>,
    pub n: Option<usize>,
    pub order_min: Option<usize>,
    pub theta: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    /// Limit Gram matrix, one inner list per row.
    pub q: Option<Vec<Vec<f64>>>,
    /// Target matrix `A`, one inner list per row.
    pub a: Option<Vec<Vec<f64>>>,
    /// Critical values `c_{O+1}..c_P` of the general-to-specific rule.
    pub critical: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fixture: FixtureSpec,
    /// Selection rule for `select` and `mc`; general-to-specific with the
    /// fixture's critical values when absent.
    pub rule: Option<SelectionRule>,
    pub budget: Budget,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub t: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    /// Headerless single-column CSV with the response.
    pub response_csv: Option<PathBuf>,
    pub replications: usize,
    pub n_ladder: Option<Vec<usize>>,
    pub auxiliary: AuxiliaryRule,
    pub tube: TubeSettings,
    pub impossibility: ImpossibilitySettings,
    pub uniform: UniformSettings,
    pub audit: AuditSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fixture: FixtureSpec::default(),
            rule: None,
            budget: Budget::default(),
            seed: 0x5eed,
            workers: None,
            out: None,
            t: None,
            gamma: None,
            response_csv: None,
            replications: 10_000,
            n_ladder: None,
            auxiliary: AuxiliaryRule::default(),
            tube: TubeSettings::default(),
            impossibility: ImpossibilitySettings::default(),
            uniform: UniformSettings::default(),
            audit: AuditSettings::default(),
        }
    }
}

/// Everything a command needs, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub fixture: Fixture,
    pub design: Arc<Design>,
    pub problem: RegressionProblem,
    pub rule: SelectionRule,
    pub t: DVector<f64>,
    pub gamma: DVector<f64>,
    pub context: Context,
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{}: cannot parse {f:?}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows)
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical JSON of the configuration.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// SHA-256 of the canonical JSON, in hex.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_json()?)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn context(&self) -> Context {
        Context { seed: self.seed, workers: self.workers, budget: Budget { seed: self.seed, ..self.budget } }
    }

    /// The fixture with all overrides applied.
    pub fn fixture(&self) -> Result<Fixture> {
        let spec = &self.fixture;
        let q = spec.q.as_deref().map(matrix_from_rows).transpose()?;
        let mut f = match (&spec.builtin, &spec.design_csv) {
            (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either a built-in fixture or a design CSV, not both".into())),
            (None, None) => return Err(Error::InvalidArgument("no fixture: name a built-in fixture or a design CSV".into())),
            (Some(name), None) => {
                let mut f = Fixture::builtin(*name);
                if let Some(q) = q {
                    f.q = q;
                }
                if let Some(o) = spec.order_min {
                    f.order_min = o;
                    if spec.critical.is_none() {
                        f.critical = vec![1.96; f.dim().saturating_sub(o)];
                    }
                }
                f
            }
            (None, Some(path)) => Fixture::from_design(read_matrix_csv(path)?, q, spec.order_min.unwrap_or(0))?,
        };
        if let Some(n) = spec.n {
            f.n = n;
        }
        if let Some(theta) = &spec.theta {
            f.theta = DVector::from_column_slice(theta);
        }
        if let Some(sigma) = spec.sigma {
            f.sigma = sigma;
        }
        if let Some(a) = &spec.a {
            f.a = matrix_from_rows(a)?;
        }
        if let Some(c) = &spec.critical {
            f.critical = c.clone();
        }
        let dim = f.dim();
        if f.theta.len() != dim {
            return Err(Error::Dimension(format!("theta has length {}, expected P = {dim}", f.theta.len())));
        }
        if f.a.ncols() != dim {
            return Err(Error::Dimension(format!("A has {} columns, expected P = {dim}", f.a.ncols())));
        }
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.budget.validate()?;
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be positive".into()));
        }
        if let Some(ladder) = &self.n_ladder {
            if ladder.is_empty() {
                return Err(Error::InvalidArgument("n ladder is empty".into()));
            }
        }
        let fixture = self.fixture()?;
        let design = fixture.design(self.seed)?;
        let problem = RegressionProblem::new(design.clone(), fixture.theta.clone(), fixture.sigma, fixture.order_min)?;
        let rule = self.rule.clone().unwrap_or_else(|| SelectionRule::general_to_specific(fixture.critical.clone()));
        rule.validate(&problem)?;
        // Checks A's rank and the critical values against the geometry.
        fixture.limits()?;
        crate::selection::Critical::new(&fixture.critical, fixture.order_min, fixture.dim())?;
        let k = fixture.k();
        let t = match &self.t {
            Some(t) if t.len() == k => DVector::from_column_slice(t),
            Some(t) if t.len() == 1 => DVector::from_element(k, t[0]),
            Some(t) => return Err(Error::Dimension(format!("t has length {}, expected k = {k}", t.len()))),
            None => DVector::zeros(k),
        };
        let dim = fixture.dim();
        let gamma = match &self.gamma {
            Some(g) if g.len() == dim => DVector::from_column_slice(g),
            Some(g) => return Err(Error::Dimension(format!("gamma has length {}, expected P = {dim}", g.len()))),
            None => DVector::zeros(dim),
        };
        Ok(Resolved { fixture, design, problem, rule, t, gamma, context: self.context() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1"}, "sed": 3}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1", "colour": 1}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"budget": {"abs_tol": 1e-6, "extra": 0}}"#).is_err());
    }

    #[test]
    fn builtin_resolves_with_overrides() {
        let c =
            RunConfig::from_json_str(r#"{"fixture": {"builtin": "COLL2", "theta": [1.0, 0.0], "n": 50}, "t": [0.5], "seed": 4}"#).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.problem.n(), 50);
        assert_eq!(r.t, DVector::from_vec(vec![0.5, 0.5]));
        assert_eq!(r.context.budget.seed, 4);
    }

    #[test]
    fn invalid_values_fail_before_computation() {
        let bad_theta = RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1", "theta": [1.0, 2.0]}}"#).unwrap();
        assert!(matches!(bad_theta.resolve(), Err(Error::Dimension(_))));
        let missing = RunConfig::default();
        assert!(matches!(missing.resolve(), Err(Error::InvalidArgument(_))));
        let bad_tol = RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1"}, "budget": {"abs_tol": -1}}"#).unwrap();
        assert!(bad_tol.resolve().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1"}}"#).unwrap();
        let b = RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1"}, "seed": 1}"#).unwrap();
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn design_csv_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows: Vec<String> = (0..12).map(|i| format!("{},{}", (i % 3) as f64 - 1.0, (i * i % 5) as f64)).collect();
        std::fs::write(&path, rows.join("\n")).unwrap();
        let c = RunConfig { fixture: FixtureSpec { design_csv: Some(path), ..FixtureSpec::default() }, ..RunConfig::default() };
        let r = c.resolve().unwrap();
        assert_eq!(r.problem.n(), 12);
        assert_eq!(r.problem.dim(), 2);
    }
}
