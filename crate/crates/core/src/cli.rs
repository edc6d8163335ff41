//! Command-line front end of the `parisi` binary.
//!
//! Every subcommand takes the same set of options. A `--config` JSON file
//! with the same keys (snake_case) overrides the flags; unknown keys are
//! rejected. Results go to `PREFIX.csv` and `PREFIX.json` with `--out
//! PREFIX`, otherwise the CSV is printed on stdout and the JSON summary on
//! stderr.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::finite_n::{
    concentration_check, covariance_residual, default_eps, estimate_f_n, Window,
    ENUMERATION_BUDGET, WINDOW_SLACK,
};
use crate::functional::{parisi_value, EvalOptions, RsbParams};
use crate::gs::{
    gs_f_curve, gs_f_max, gs_phase_diagram, phase_csv, PhaseGrid, Region, SADDLE_Q_TOL, U0_TOL,
};
use crate::invariants::{run_suite, SuiteOptions};
use crate::model::{Atom, MixtureXi, PriorMeasure};
use crate::objective::{
    global_free_energy, local_csv, local_free_energy, pk_value, ObjectiveOptions,
};
use crate::rs::{f_curve_csv, rs_verdict, RsOptions};

/// Exit status for invalid input.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures, including failed invariants.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit status when an enumeration exceeds its budget.
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "parisi",
    version,
    about = "Free energies of generalized Sherrington-Kirkpatrick models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// X_0 and P_k for explicit (m, q, lambda).
    Eval(RunArgs),
    /// P(xi, u) at one self-overlap.
    Local(RunArgs),
    /// P(xi) with the scanned u profile.
    Global(RunArgs),
    /// Replica-symmetric critical point, fluctuation curve and verdict.
    RsCheck(RunArgs),
    /// f(a) of the Ghatak-Sherrington paramagnet.
    GsFcurve(RunArgs),
    /// Ghatak-Sherrington phase diagram in (h/beta, 1/beta).
    GsPhase(RunArgs),
    /// Exact finite-N free energies by enumeration.
    FiniteN(RunArgs),
    /// Randomized property suite of the Parisi functional.
    Verify(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eval(_) => "eval",
            Command::Local(_) => "local",
            Command::Global(_) => "global",
            Command::RsCheck(_) => "rs-check",
            Command::GsFcurve(_) => "gs-fcurve",
            Command::GsPhase(_) => "gs-phase",
            Command::FiniteN(_) => "finite-n",
            Command::Verify(_) => "verify",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Eval(a)
            | Command::Local(a)
            | Command::Global(a)
            | Command::RsCheck(a)
            | Command::GsFcurve(a)
            | Command::GsPhase(a)
            | Command::FiniteN(a)
            | Command::Verify(a) => a,
        }
    }
}

/// Options shared by all subcommands; each uses the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunArgs {
    /// JSON file whose keys override the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Write PREFIX.csv and PREFIX.json instead of stdout/stderr.
    #[arg(long)]
    pub out: Option<String>,

    /// gs (spins -1, 0, 1 with crystal field h sigma^2), sk (spins -1, 1
    /// with external field h sigma) or custom (see --atoms).
    #[arg(long)]
    pub prior: Option<String>,
    /// Atoms as sigma:weight pairs, e.g. "-1:1,0:2,1:1"; tilted by
    /// exp(h sigma^2).
    #[arg(long, allow_hyphen_values = true)]
    pub atoms: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    /// Inverse temperature; xi(q) = beta^2 q^2 / 2 unless --xi is given.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Mixture as power:coefficient pairs, e.g. "2:0.5,4:0.1".
    #[arg(long)]
    pub xi: Option<String>,

    #[arg(long)]
    pub u: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,

    #[arg(long)]
    pub k_max: Option<usize>,
    /// Improvement below which the level count stops growing.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gh_order: Option<usize>,
    #[arg(long)]
    pub adaptive_tol: Option<f64>,
    #[arg(long)]
    pub scan_points: Option<usize>,
    /// Points of an f(a) curve.
    #[arg(long)]
    pub points: Option<usize>,

    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub h_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub inv_beta_range: Option<Vec<f64>>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,

    /// Number of spins.
    #[arg(long)]
    pub n: Option<usize>,
    /// Disorder samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Self-overlap window half-width (default N^{-1/2} when --u is set).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Also run the covariance and concentration checks.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub checks: Option<bool>,

    /// Random instances per property in `verify`.
    #[arg(long)]
    pub trials: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        RunArgs {
            config: None,
            $($field: $top.$field.or($base.$field),)*
        }
    };
}

impl RunArgs {
    /// Fields of `top` replace those of `self` where set.
    pub fn overlaid(&self, top: &RunArgs) -> RunArgs {
        let (base, top) = (self.clone(), top.clone());
        overlay!(base, top; out, prior, atoms, h, beta, xi, u, m, q, lambda, k_max, tol,
            starts, seed, gh_order, adaptive_tol, scan_points, points, h_range,
            inv_beta_range, rows, cols, n, samples, eps, checks, trials)
    }

    /// Applies the `--config` file, if any.
    pub fn resolve(&self) -> Result<RunArgs> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: RunArgs = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(self.overlaid(&file))
    }

    fn h(&self) -> f64 {
        self.h.unwrap_or(0.0)
    }

    fn beta(&self) -> f64 {
        self.beta.unwrap_or(1.0)
    }

    pub fn prior_measure(&self) -> Result<PriorMeasure> {
        let kind =
            self.prior
                .as_deref()
                .unwrap_or(if self.atoms.is_some() { "custom" } else { "gs" });
        match kind {
            "gs" => Ok(PriorMeasure::ghatak_sherrington(self.h())),
            "sk" => Ok(PriorMeasure::sherrington_kirkpatrick(self.h())),
            "custom" => {
                let text = self
                    .atoms
                    .as_deref()
                    .ok_or_else(|| Error::Config("custom prior needs --atoms".into()))?;
                let atoms = parse_pairs(text, "atoms")?
                    .into_iter()
                    .map(|(s, w)| Atom::new(s, w))
                    .collect();
                let h = self.h();
                PriorMeasure::atomic(atoms)?.tilted(|s| h * s * s)
            }
            other => Err(Error::Config(format!(
                "unknown prior {other:?} (expected gs, sk or custom)"
            ))),
        }
    }

    pub fn mixture(&self) -> Result<MixtureXi> {
        match &self.xi {
            None => {
                let beta = self.beta();
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
                }
                Ok(MixtureXi::sk(beta))
            }
            Some(text) => {
                let mut terms = Vec::new();
                for (p, c) in parse_pairs(text, "xi")? {
                    if p.fract() != 0.0 || p < 1.0 {
                        return Err(Error::Config(format!(
                            "xi power {p} is not a positive integer"
                        )));
                    }
                    terms.push((p as u32, c));
                }
                MixtureXi::new(terms)
            }
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        let mut eo = EvalOptions::default();
        if let Some(o) = self.gh_order {
            eo.gh_order = o;
        }
        if let Some(t) = self.adaptive_tol {
            eo.adaptive_tol = t;
        }
        eo
    }

    pub fn objective_options(&self) -> ObjectiveOptions {
        let mut o = ObjectiveOptions {
            eval: self.eval_options(),
            ..ObjectiveOptions::default()
        };
        if let Some(k) = self.k_max {
            o.k_max = k;
        }
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(s) = self.starts {
            o.starts = s;
        }
        if let Some(s) = self.seed {
            o.seed = s;
        }
        if let Some(s) = self.scan_points {
            o.scan_points = s;
        }
        o
    }

    pub fn rs_options(&self) -> RsOptions {
        let mut o = RsOptions::default();
        if let Some(p) = self.points {
            o.a_points = p;
        }
        o
    }

    pub fn phase_grid(&self) -> Result<PhaseGrid> {
        let mut g = PhaseGrid::default();
        if let Some(r) = &self.h_range {
            g.h_over_beta = range_pair(r, "h-range")?;
        }
        if let Some(r) = &self.inv_beta_range {
            g.inv_beta = range_pair(r, "inv-beta-range")?;
        }
        if let Some(r) = self.rows {
            g.rows = r;
        }
        if let Some(c) = self.cols {
            g.columns = c;
        }
        g.validate()?;
        Ok(g)
    }

    fn require_u(&self) -> Result<f64> {
        self.u
            .ok_or_else(|| Error::Config("this subcommand needs --u".into()))
    }
}

fn range_pair(v: &[f64], name: &str) -> Result<(f64, f64)> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("--{name} takes two values lo,hi"))),
    }
}

/// Parses `"a:b,c:d"` into pairs.
fn parse_pairs(text: &str, what: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("{what}: expected a:b, got {item:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("{what}: cannot parse {s:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

/// Artifacts of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub csv: String,
    pub json: String,
    pub status: i32,
}

/// Numerical settings reported with every result.
#[derive(Debug, Serialize)]
struct Tolerances {
    eval: EvalOptions,
    objective: ObjectiveOptions,
    rs: RsOptions,
    gs_u0_tol: f64,
    gs_saddle_q_tol: f64,
    window_slack: f64,
    enumeration_budget: f64,
}

fn summary(command: &str, args: &RunArgs, result: Value) -> String {
    let tolerances = Tolerances {
        eval: args.eval_options(),
        objective: args.objective_options(),
        rs: args.rs_options(),
        gs_u0_tol: U0_TOL,
        gs_saddle_q_tol: SADDLE_Q_TOL,
        window_slack: WINDOW_SLACK,
        enumeration_budget: ENUMERATION_BUDGET,
    };
    let doc = json!({
        "command": command,
        "inputs": args,
        "tolerances": tolerances,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("summary serializes");
    s.push('\n');
    s
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

/// Runs a parsed command and returns its artifacts without writing them.
pub fn execute(command: &Command) -> Result<Output> {
    let args = command.args().resolve()?;
    let name = command.name();
    let mut status = 0;
    let (csv, result) = match command {
        Command::Eval(_) => {
            let prior = args.prior_measure()?;
            let xi = args.mixture()?;
            let m = args
                .m
                .clone()
                .ok_or_else(|| Error::Config("eval needs --m".into()))?;
            let q = args
                .q
                .clone()
                .ok_or_else(|| Error::Config("eval needs --q".into()))?;
            let params = RsbParams::new(m, q, args.lambda.unwrap_or(0.0))?;
            let eo = args.eval_options();
            let ev = parisi_value(&prior, &xi, &params, &eo)?;
            let pk = pk_value(&prior, &xi, &params, &eo)?;
            let csv = format!(
                "x0,dx0_dlambda,d2x0_dlambda2,pk,gh_order\n{},{},{},{},{}\n",
                ev.x0, ev.dx0_dlambda, ev.d2x0_dlambda2, pk, ev.order
            );
            let result = json!({
                "x0": ev.x0,
                "dx0_dlambda": ev.dx0_dlambda,
                "d2x0_dlambda2": ev.d2x0_dlambda2,
                "pk": pk,
                "gh_order": ev.order,
                "order_converged": ev.order_converged,
                "collapsed_params": params.collapse_empty_levels(),
            });
            (csv, result)
        }
        Command::Local(_) => {
            let prior = args.prior_measure()?;
            let xi = args.mixture()?;
            let r = local_free_energy(&prior, &xi, args.require_u()?, &args.objective_options())?;
            (local_csv(std::slice::from_ref(&r)), to_value(&r))
        }
        Command::Global(_) => {
            let prior = args.prior_measure()?;
            let xi = args.mixture()?;
            let g = global_free_energy(&prior, &xi, &args.objective_options())?;
            let result = json!({
                "value": g.value,
                "u_star": g.u_star,
                "profile_points": g.profile.len(),
            });
            (g.profile_csv(), result)
        }
        Command::RsCheck(_) => {
            let prior = args.prior_measure()?;
            let xi = args.mixture()?;
            let sol = rs_verdict(&prior, &xi, args.require_u()?, &args.rs_options())?;
            let mut result = to_value(&sol);
            if let Value::Object(map) = &mut result {
                map.remove("f_curve");
            }
            (f_curve_csv(&sol.f_curve), result)
        }
        Command::GsFcurve(_) => {
            let beta = args.beta();
            let u = args.require_u()?;
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::Config(format!("gs-fcurve needs 0 < u < 1, got {u}")));
            }
            let points = args.points.unwrap_or(513);
            let curve = gs_f_curve(beta, u, points);
            let (a_at_max, f_max) = gs_f_max(beta, u, points);
            let rs = RsOptions::default();
            let result = json!({
                "beta": beta,
                "u": u,
                "f_max": f_max,
                "a_at_max": a_at_max,
                "at_value": 0.5 * beta * beta * (-1.0 + beta * beta * u * u),
                "at_satisfied": beta * u <= 1.0,
                "rsb_detected": f_max > rs.detect_tol,
            });
            (f_curve_csv(&curve), result)
        }
        Command::GsPhase(_) => {
            let grid = args.phase_grid()?;
            let points = gs_phase_diagram(&grid)?;
            let count = |r: Region| points.iter().filter(|p| p.region == r).count();
            let result = json!({
                "grid": grid,
                "r1": count(Region::R1),
                "r2": count(Region::R2),
                "r3": count(Region::R3),
                "unresolved": count(Region::Unresolved),
            });
            (phase_csv(&points), result)
        }
        Command::FiniteN(_) => {
            let prior = args.prior_measure()?;
            if args.xi.is_some() {
                return Err(Error::Config(
                    "finite-n supports only xi(q) = beta^2 q^2 / 2 (use --beta)".into(),
                ));
            }
            let beta = args.beta();
            let n = args.n.unwrap_or(10);
            let samples = args.samples.unwrap_or(100);
            let seed = args.seed.unwrap_or(0);
            let window = args.u.map(|u| Window {
                u,
                eps: args.eps.unwrap_or_else(|| default_eps(n)),
            });
            let est = estimate_f_n(&prior, beta, n, samples, seed, window)?;
            let mut result = to_value(&est);
            if args.checks.unwrap_or(false) {
                let cov = covariance_residual(&prior, beta, n, 100, 2000, seed)?;
                let conc = concentration_check(&prior, beta, n, samples, seed, &[1.0, 2.0, 4.0])?;
                if let Value::Object(map) = &mut result {
                    let mut cov_v = to_value(&cov);
                    if let Value::Object(c) = &mut cov_v {
                        c.remove("trials");
                    }
                    map.insert("covariance".into(), cov_v);
                    map.insert("concentration".into(), to_value(&conc));
                }
            }
            (est.samples_csv(), result)
        }
        Command::Verify(_) => {
            let mut opts = SuiteOptions::default();
            if let Some(t) = args.trials {
                opts.trials = t;
                opts.derivative_trials = opts.derivative_trials.min(t);
            }
            if let Some(s) = args.seed {
                opts.seed = s;
            }
            let outcomes = run_suite(&opts)?;
            let mut csv = String::from("property,trials,failures,worst,tolerance,passed\n");
            for o in &outcomes {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    o.name,
                    o.trials,
                    o.failures,
                    o.worst,
                    o.tolerance,
                    o.passed()
                ));
            }
            if outcomes.iter().any(|o| !o.passed()) {
                status = EXIT_NUMERICAL;
            }
            let result = json!({
                "suite": opts,
                "all_passed": status == 0,
                "properties": outcomes,
            });
            (csv, result)
        }
    };
    Ok(Output {
        csv,
        json: summary(name, &args, result),
        status,
    })
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BudgetExceeded(_) => EXIT_BUDGET,
        Error::NoConvergence(_) | Error::StepUnderflow(_) | Error::QuadratureOrder(_) => {
            EXIT_NUMERICAL
        }
        _ => EXIT_CONFIG,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PARISI_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "PARISI_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn write_artifacts(out: Option<&str>, output: &Output) -> std::io::Result<()> {
    use std::io::Write;
    match out {
        Some(prefix) => {
            std::fs::write(format!("{prefix}.csv"), &output.csv)?;
            std::fs::write(format!("{prefix}.json"), &output.json)
        }
        None => {
            std::io::stdout().write_all(output.csv.as_bytes())?;
            std::io::stderr().write_all(output.json.as_bytes())
        }
    }
}

/// Parses `args`, runs the command, writes its artifacts and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let run = || -> Result<Output> {
        configure_threads()?;
        execute(&cli.command)
    };
    match run() {
        Ok(output) => {
            let out = cli.command.args().resolve().ok().and_then(|a| a.out);
            if let Err(e) = write_artifacts(out.as_deref(), &output) {
                eprintln!("error: cannot write output: {e}");
                return EXIT_CONFIG;
            }
            output.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> Result<Output> {
        let cli =
            Cli::try_parse_from(std::iter::once("parisi").chain(args.iter().copied())).unwrap();
        execute(&cli.command)
    }

    #[test]
    fn parses_pairs() {
        assert_eq!(
            parse_pairs("-1:1, 0:2.5", "atoms").unwrap(),
            vec![(-1.0, 1.0), (0.0, 2.5)]
        );
        assert!(parse_pairs("1", "atoms").is_err());
        assert!(parse_pairs("a:1", "atoms").is_err());
    }

    #[test]
    fn config_overrides_flags() {
        let flags = RunArgs {
            beta: Some(1.0),
            u: Some(0.3),
            ..Default::default()
        };
        let file: RunArgs = serde_json::from_str(r#"{"beta": 2.0, "points": 9}"#).unwrap();
        let merged = flags.overlaid(&file);
        assert_eq!(merged.beta, Some(2.0));
        assert_eq!(merged.u, Some(0.3));
        assert_eq!(merged.points, Some(9));
        assert!(serde_json::from_str::<RunArgs>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn custom_prior_and_mixture() {
        let a = RunArgs {
            atoms: Some("-1:1,0:1,1:1".into()),
            h: Some(0.4),
            xi: Some("2:0.5,4:0.1".into()),
            ..Default::default()
        };
        assert_eq!(
            a.prior_measure().unwrap(),
            PriorMeasure::ghatak_sherrington(0.4)
        );
        assert_eq!(a.mixture().unwrap().terms(), &[(2, 0.5), (4, 0.1)]);
        let bad = RunArgs {
            prior: Some("xy".into()),
            ..Default::default()
        };
        assert!(matches!(bad.prior_measure(), Err(Error::Config(_))));
    }

    #[test]
    fn eval_collapses_duplicate_levels() {
        let a = run(&[
            "eval",
            "--beta",
            "1.5",
            "--m",
            "0,0.4,1",
            "--q",
            "0,0.3,0.3,0.6",
            "--lambda",
            "-0.2",
        ])
        .unwrap();
        let b = run(&[
            "eval",
            "--beta",
            "1.5",
            "--m",
            "0,1",
            "--q",
            "0,0.3,0.6",
            "--lambda",
            "-0.2",
        ])
        .unwrap();
        assert_eq!(a.csv, b.csv);
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let e = run(&["local", "--beta", "1"]).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e = run(&["finite-n", "--n", "30"]).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_BUDGET);
    }

    #[test]
    fn fcurve_summary_carries_tolerances() {
        let o = run(&[
            "gs-fcurve",
            "--beta",
            "17.5",
            "--u",
            "0.05",
            "--points",
            "65",
        ])
        .unwrap();
        assert_eq!(o.csv.lines().count(), 66);
        let v: Value = serde_json::from_str(&o.json).unwrap();
        assert!(v["result"]["f_max"].as_f64().unwrap() > 0.0);
        assert!(v["tolerances"]["eval"]["adaptive_tol"].is_number());
    }
}
