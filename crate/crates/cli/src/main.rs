//! `postsel` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or input error, 2 numerical budget
//! exhausted, 3 experiment refused because its hypothesis fails on the
//! fixture. Errors are reported on stderr as one JSON object.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use postsel::config::{read_matrix_csv, Resolved, RunConfig};
use postsel::dist_exact::{cdf_exact, cdf_exact_decomposed, CdfResult};
use postsel::dist_limit::{cdf_limit, cdf_limit_integral, pdf_limit, LocalAlternative};
use postsel::estimators::PlugInEstimator;
use postsel::experiments::{
    aic_equivalence_audit, convergence_sweep, impossibility_demo, tube_sweep, uniform_case_sweep, DemoSelection, SweepReport,
};
use postsel::fixtures::FixtureName;
use postsel::montecarlo::{empirical_cdf, simulate_response, write_raw_dump, SimulationPlan};
use postsel::report::{write_result, write_sweep};
use postsel::selection::{post_select_fit, Critical, SelectionRule};
use postsel::{selftest, Error};

#[derive(Parser)]
#[command(name = "postsel", version, about = "Distributions of post-model-selection estimators in linear regression")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for designs, simulated responses and sampled integrals.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for simulation; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Absolute tolerance of the outer integration.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Monte Carlo replications.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Built-in fixture: ORTHO2, COLL2, BLOCK_ORTHO or P1.
    #[arg(long, global = true)]
    fixture: Option<String>,
    /// Evaluation point; one value is repeated across all coordinates.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    t: Option<Vec<f64>>,
    /// Local parameter of the limit distribution.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    gamma: Option<Vec<f64>>,
    /// True regression parameter.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Sample size.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Sample sizes of a sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    n_ladder: Option<Vec<usize>>,
    /// Headerless single-column CSV with the response; simulated from the seed when absent.
    #[arg(long, global = true)]
    response: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Nested least-squares fits, variance estimate and t-statistics.
    Fit,
    /// Apply the selection rule and report the post-selection estimate.
    Select,
    /// Finite-sample cdf of the general-to-specific estimator.
    CdfExact {
        /// Also report the per-model decomposition.
        #[arg(long)]
        decompose: bool,
    },
    /// Limit cdf under the local alternative `theta + gamma/sqrt(n)`.
    CdfLimit {
        /// Also evaluate the integral cross-check.
        #[arg(long)]
        integral: bool,
        /// Also evaluate the density.
        #[arg(long)]
        density: bool,
    },
    /// Plug-in cdf estimate and the Gaussian estimates for every order.
    Estimate,
    /// Monte Carlo cdf, selection probabilities and conditional cdfs.
    Mc {
        /// Write one CSV row per replication to the output directory.
        #[arg(long)]
        dump: bool,
    },
    /// Run an experiment.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        /// Use AIC selection in the impossibility demo.
        #[arg(long)]
        aic: bool,
    },
    /// Run the quick invariant suite.
    SelfTest,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Convergence,
    Tube,
    Impossibility,
    Uniform,
    AicAudit,
}

enum Failure {
    Error(Error),
    Budget(String),
    SelfTest,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

/// nalgebra serializes matrices as `[column-major data, rows, cols]`;
/// rewrite those into plain arrays (vectors) or lists of rows.
fn plain(value: Value) -> Value {
    match value {
        Value::Array(items) => {
            // Statically sized dimensions serialize as null.
            if let [Value::Array(data), r, c] = items.as_slice() {
                let r = r.as_u64().map(|r| r as usize).unwrap_or(data.len());
                let c = c.as_u64().map(|c| c as usize).unwrap_or(1);
                {
                    if data.len() == r * c && data.iter().all(Value::is_number) {
                        return if c == 1 {
                            Value::Array(data.clone())
                        } else {
                            Value::Array((0..r).map(|i| Value::Array((0..c).map(|j| data[j * r + i].clone()).collect())).collect())
                        };
                    }
                }
            }
            Value::Array(items.into_iter().map(plain).collect())
        }
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, plain(v))).collect()),
        other => other,
    }
}

fn print(value: &Value) {
    let text = serde_json::to_string_pretty(&plain(value.clone())).expect("JSON values serialize");
    // A closed pipe downstream is not an error worth a panic.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut c = match &g.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &g.fixture {
        c.fixture.builtin = Some(name.parse::<FixtureName>()?);
        c.fixture.design_csv = None;
    } else if c.fixture.builtin.is_none() && c.fixture.design_csv.is_none() {
        c.fixture.builtin = Some(FixtureName::P1);
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if g.workers.is_some() {
        c.workers = g.workers;
    }
    if g.out.is_some() {
        c.out = g.out.clone();
    }
    if let Some(tol) = g.tol {
        c.budget.abs_tol = tol;
    }
    if let Some(r) = g.reps {
        c.replications = r;
        c.impossibility.replications = r;
        c.uniform.replications = r;
        c.audit.ladder_replications = r;
    }
    if g.t.is_some() {
        c.t = g.t.clone();
    }
    if g.gamma.is_some() {
        c.gamma = g.gamma.clone();
    }
    if g.theta.is_some() {
        c.fixture.theta = g.theta.clone();
    }
    if g.n.is_some() {
        c.fixture.n = g.n;
    }
    if g.n_ladder.is_some() {
        c.n_ladder = g.n_ladder.clone();
    }
    if g.response.is_some() {
        c.response_csv = g.response.clone();
    }
    Ok(c)
}

fn response(c: &RunConfig, r: &Resolved) -> Result<(nalgebra::DVector<f64>, String), Error> {
    match &c.response_csv {
        Some(path) => {
            let m = read_matrix_csv(path)?;
            if m.ncols() != 1 {
                return Err(Error::Dimension(format!("response CSV has {} columns, expected 1", m.ncols())));
            }
            Ok((m.column(0).into_owned(), path.display().to_string()))
        }
        None => Ok((simulate_response(&r.problem, c.seed, 0), format!("simulated, seed {}, replication 0", c.seed))),
    }
}

fn check_budget(results: &[&CdfResult]) -> Result<(), Failure> {
    if results.iter().any(|r| r.budget_exhausted) {
        return Err(Failure::Budget("adaptive integration hit its subdivision limit before reaching the tolerance".into()));
    }
    Ok(())
}

fn emit(c: &RunConfig, name: &str, command: &str, payload: &Value) -> Result<(), Error> {
    if let Some(dir) = &c.out {
        write_result(dir, name, command, c, &plain(payload.clone()))?;
    }
    print(payload);
    Ok(())
}

fn sweep_payload(r: &SweepReport) -> Value {
    json!({
        "experiment": r.experiment,
        "master_seed": r.master_seed,
        "passed": r.passed(),
        "verdicts": r.verdicts,
        "notes": r.notes,
        "rows": r.rows.len(),
        "wall_clock_seconds": r.wall_clock_seconds,
    })
}

fn ladder(c: &RunConfig, default: &[usize]) -> Vec<usize> {
    c.n_ladder.clone().unwrap_or_else(|| default.to_vec())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut c = load_config(&cli.global)?;
    if let Command::Sweep { aic: true, .. } = cli.command {
        c.impossibility.selection = DemoSelection::Aic;
    }
    let r = c.resolve()?;
    let fixture = &r.fixture;
    match cli.command {
        Command::Fit => {
            let (y, source) = response(&c, &r)?;
            let fit = r.problem.fit(&y)?;
            let estimates: Vec<Vec<f64>> = (0..=r.problem.dim()).map(|p| fit.estimate(&r.design, p).iter().copied().collect()).collect();
            let t_stats: Vec<f64> =
                (0..=r.problem.dim()).map(|p| if fit.is_degenerate() { f64::NAN } else { fit.t_stat(&r.design, p) }).collect();
            let payload = json!({
                "response": source,
                "n": r.problem.n(),
                "dim": r.problem.dim(),
                "sigma_hat": fit.sigma_hat(),
                "rss": fit.rss(),
                "degenerate": fit.is_degenerate(),
                "t_statistics": t_stats,
                "nested_estimates": estimates,
            });
            emit(&c, "fit", "fit", &payload)?;
        }
        Command::Select => {
            let (y, source) = response(&c, &r)?;
            let f = post_select_fit(&r.problem, &y, &r.rule)?;
            let payload = json!({ "response": source, "selected_label": f.selected.to_string(), "fit": f });
            emit(&c, "select", "select", &payload)?;
        }
        Command::CdfExact { decompose } => {
            if !matches!(r.rule, SelectionRule::GeneralToSpecific { .. }) {
                return Err(Error::InvalidArgument(
                    "the exact cdf covers the general-to-specific rule only; use mc for other rules".into(),
                )
                .into());
            }
            let payload = if decompose {
                let d = cdf_exact_decomposed(&r.problem, &fixture.a, &r.t, &fixture.critical, &r.context.budget)?;
                check_budget(&[&d.total]).inspect_err(|_e| {
                    print(&json!(d));
                })?;
                json!(d)
            } else {
                let g = cdf_exact(&r.problem, &fixture.a, &r.t, &fixture.critical, &r.context.budget)?;
                check_budget(&[&g]).inspect_err(|_e| {
                    print(&json!(g));
                })?;
                json!(g)
            };
            emit(&c, "cdf_exact", "cdf-exact", &payload)?;
        }
        Command::CdfLimit { integral, density } => {
            let limits = fixture.limits()?;
            let crit = Critical::new(&fixture.critical, fixture.order_min, fixture.dim())?;
            let alt = LocalAlternative::new(fixture.theta.clone(), r.gamma.clone(), fixture.sigma)?;
            let g = cdf_limit(&limits, &alt, &r.t, &crit, &r.context.budget)?;
            let mut payload = json!({
                "value": g.result.value,
                "abs_error": g.result.abs_error,
                "clamped": g.result.clamped,
                "budget_exhausted": g.result.budget_exhausted,
                "method": g.result.method,
                "trace": g.trace,
            });
            let mut checks = vec![g.result.clone()];
            if integral {
                let i = cdf_limit_integral(&limits, &alt, &r.t, &crit, &r.context.budget)?;
                payload["integral_path"] = json!(i);
                checks.push(i);
            }
            if density {
                payload["density"] = json!(pdf_limit(&limits, &alt, &r.t, &crit)?);
            }
            if let Err(e) = check_budget(&checks.iter().collect::<Vec<_>>()) {
                print(&payload);
                return Err(e);
            }
            emit(&c, "cdf_limit", "cdf-limit", &payload)?;
        }
        Command::Estimate => {
            let (y, source) = response(&c, &r)?;
            let est = PlugInEstimator::new(&r.problem, &fixture.a, &fixture.critical, c.auxiliary, r.context.budget)?;
            let fit = r.problem.fit(&y)?;
            let g = est.g_check_fit(&fit, &r.t)?;
            let phi = (fixture.order_min..=fixture.dim())
                .map(|p| Ok(json!({ "p": p, "value": est.phi_hat_fit(&fit, p, &r.t)? })))
                .collect::<Result<Vec<_>, Error>>()?;
            let payload = json!({ "response": source, "g_check": g, "phi_hat": phi });
            emit(&c, "estimate", "estimate", &payload)?;
        }
        Command::Mc { dump } => {
            let plan =
                SimulationPlan::new(r.problem.clone(), r.rule.clone(), fixture.a.clone(), c.replications, c.seed)?.with_workers(c.workers);
            let e = empirical_cdf(&plan, std::slice::from_ref(&r.t))?;
            let mut payload = json!(e);
            if dump {
                let dir = c.out.as_ref().ok_or_else(|| Error::InvalidArgument("--dump needs --out".into()))?;
                std::fs::create_dir_all(dir).map_err(Error::from)?;
                let path = dir.join("raw_replications.csv");
                write_raw_dump(&plan, &path)?;
                payload["raw_dump"] = json!(path.display().to_string());
            }
            emit(&c, "mc", "mc", &payload)?;
        }
        Command::Sweep { kind, .. } => {
            let ctx = &r.context;
            let report = match kind {
                SweepKind::Convergence => convergence_sweep(fixture, &r.gamma, &r.t, &ladder(&c, &[50, 200, 1000, 5000]), ctx)?,
                SweepKind::Tube => tube_sweep(fixture, &r.t, &c.tube, &ladder(&c, &[100, 400, 1600]), ctx)?,
                SweepKind::Impossibility => {
                    let mut settings = c.impossibility.clone();
                    if settings.gamma.is_none() && c.gamma.is_some() {
                        settings.gamma = c.gamma.clone();
                    }
                    impossibility_demo(fixture, &r.t, &settings, &ladder(&c, &[100, 400, 1600]), ctx)?
                }
                SweepKind::Uniform => uniform_case_sweep(fixture, &r.t, &c.uniform, &ladder(&c, &[100, 300, 1000]), ctx)?,
                SweepKind::AicAudit => aic_equivalence_audit(fixture, &c.audit, &ladder(&c, &[20, 200, 2000]), ctx)?,
            };
            if let Some(dir) = &c.out {
                write_sweep(dir, &format!("sweep {}", report.experiment), &c, &report)?;
            }
            print(&sweep_payload(&report));
        }
        Command::SelfTest => {
            let checks = selftest::run()?;
            let passed = checks.iter().all(|c| c.passed);
            print(&json!({ "passed": passed, "checks": checks }));
            if !passed {
                return Err(Failure::SelfTest);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            let code = if matches!(e, Error::HypothesisViolated(_)) { 3 } else { 1 };
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(code)
        }
        Err(Failure::Budget(msg)) => {
            eprintln!("{}", json!({ "error": "budget_exhausted", "message": msg }));
            ExitCode::from(2)
        }
        Err(Failure::SelfTest) => {
            eprintln!("{}", json!({ "error": "self_test_failed", "message": "at least one invariant check failed" }));
            ExitCode::from(1)
        }
    }
}
