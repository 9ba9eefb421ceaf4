//! Command-line dispatcher.
//!
//! Exit codes: 0 on success, 2 when the input is rejected (bad flags,
//! schema mismatch, infeasible or untabulated levels), 1 on an internal
//! numerical failure. Failures print a one-line JSON object
//! `{"error":{"kind":..,"message":..}}` to stderr.
//!
//! Two-sided tests: `--alpha` is the overall level and each tail uses the
//! adjusted level for `alpha / 2`.

use std::collections::hash_map::RandomState;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::hash::{BuildHasher, Hasher};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use clusterperm_core::calibrate::{calibrate, CalibrationParams};
use clusterperm_core::estimators::{estimate, ClusterDataset, EstimatorSpec, Link, Mode};
use clusterperm_core::permkit::{AssignmentSet, Design, DEFAULT_ENUMERATION_CAP};
use clusterperm_core::permtest::{
    adjusted_test, adjusted_test_with_entry, lookup_bar_alpha, order_index_for_level, size_bound, AlphaEntry,
    ClusterEstimates, EntrySource, TestOutcome,
};
use clusterperm_core::power::{power_lower_bound, PowerSpec};
use clusterperm_core::rivals::{bch_test, im_test, wild_cluster_bootstrap_test, PooledDesign};
use clusterperm_core::rng::RngStream;
use clusterperm_core::simharness::{run_did_study, run_normal_location_study, DidConfig, NormalLocationConfig, StudyResult};
use clusterperm_core::{Error, Side};
use serde_json::json;

use crate::config::{self, ConfigError};
use crate::io::{ingest_csv, IngestError, Ingested, Schema};
use crate::par::RayonExecutor;

/// Adjusted permutation inference with few heterogeneous clusters.
#[derive(Debug, Parser)]
#[command(name = "clusterperm", version)]
pub struct Cli {
    /// Worker threads for simulation and calibration (0 = all CPUs).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Emit JSON.
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit CSV.
    #[arg(long, global = true)]
    pub csv: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Worst-case size of the unadjusted test at any level below it.
    Bound {
        /// Treated clusters.
        #[arg(long)]
        q1: usize,
        /// Control clusters.
        #[arg(long)]
        q0: usize,
    },
    /// Adjusted level from the embedded table or by calibration.
    Alpha {
        /// Treated clusters.
        #[arg(long)]
        q1: usize,
        /// Control clusters.
        #[arg(long)]
        q0: usize,
        /// One-sided nominal level.
        #[arg(long)]
        alpha: f64,
        /// Search by simulation instead of reading the table.
        #[arg(long)]
        calibrate: bool,
        /// Seed for calibration; generated and reported when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// key=value file of calibration parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Single calibration parameter, `key=value`; may repeat.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Adjusted permutation test or one of its rivals on a CSV file.
    Test {
        /// Input CSV.
        #[arg(long)]
        input: PathBuf,
        /// How cluster estimates are obtained.
        #[arg(long, value_enum, default_value_t = ModeArg::Estimates)]
        mode: ModeArg,
        /// Link for binary-choice mode.
        #[arg(long, value_enum, default_value_t = LinkArg::Logistic)]
        link: LinkArg,
        /// Overall level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Alternative.
        #[arg(long, value_enum, default_value_t = SideArg::Right)]
        side: SideArg,
        /// Null difference of means.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda: f64,
        /// Relabelings drawn when the full set exceeds the enumeration cap.
        #[arg(long, default_value_t = 100_000)]
        sample_m: usize,
        /// Largest assignment set that is enumerated.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        enumeration_cap: u64,
        /// Per-tail adjusted level, e.g. from `alpha --calibrate`.
        #[arg(long)]
        bar_alpha: Option<f64>,
        /// Procedure.
        #[arg(long, value_enum, default_value_t = MethodArg::Ap)]
        method: MethodArg,
        /// Bootstrap draws for `wcb`.
        #[arg(long, default_value_t = 999)]
        bootstrap_b: usize,
        /// Seed for sampling or bootstrap; generated and reported when needed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analytic lower bound on power.
    Power {
        /// Treatment effect.
        #[arg(long, allow_negative_numbers = true)]
        delta: f64,
        /// Treated standard deviations, comma separated.
        #[arg(long)]
        sigmas_treated: String,
        /// Control standard deviations, comma separated.
        #[arg(long)]
        sigmas_control: String,
        /// Effect grid `start:stop:step` or a list; output is CSV.
        #[arg(long)]
        delta_grid: Option<String>,
    },
    /// Monte-Carlo study.
    Simulate {
        /// Study.
        #[arg(long, value_enum)]
        study: StudyArg,
        /// key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single setting, `key=value`; applied after the file; may repeat.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output CSV path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed; overrides the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Estimate source for `test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// `cluster_id,treated,estimate` file.
    Estimates,
    /// Intercept of a per-cluster regression.
    Intercept,
    /// Post-period coefficient of a per-cluster regression.
    DidSlope,
    /// Intercept of a per-cluster binary-choice model.
    BinaryChoice,
}

/// Binary-choice link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    /// Logistic.
    Logistic,
    /// Probit.
    Probit,
}

/// Alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    /// Treated larger.
    Right,
    /// Treated smaller.
    Left,
    /// Either.
    TwoSided,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Right => Side::Right,
            SideArg::Left => Side::Left,
            SideArg::TwoSided => Side::TwoSided,
        }
    }
}

/// Procedure for `test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Adjusted permutation test.
    Ap,
    /// Studentized cluster t-test.
    Im,
    /// Pooled cluster-robust t-test.
    Bch,
    /// Wild cluster bootstrap.
    Wcb,
}

/// Simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    /// Two-sample normal location problem.
    NormalLocation,
    /// Difference in differences with AR(1) errors.
    Did,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    /// Process exit code.
    pub code: i32,
    /// Standard output.
    pub stdout: String,
    /// Standard error.
    pub stderr: String,
}

#[derive(Debug)]
enum Failure {
    Invalid { kind: &'static str, message: String },
    Internal { kind: &'static str, message: String },
}

impl Failure {
    fn invalid(kind: &'static str, message: impl Into<String>) -> Self {
        Failure::Invalid { kind, message: message.into() }
    }
}

fn core_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain { .. } => "domain",
        Error::Numerical { .. } => "numerical",
        Error::Bracket { .. } => "bracket",
        Error::Capacity { .. } => "capacity",
        Error::Shape { .. } => "shape",
        Error::Contract(_) => "contract",
        Error::Infeasible { .. } => "infeasible",
        Error::NotTabulated { .. } => "not_tabulated",
        Error::RankDeficient { .. } => "rank_deficient",
        Error::InsufficientRows { .. } => "insufficient_rows",
        Error::Separation { .. } => "separation",
        Error::NoConvergence { .. } => "no_convergence",
        Error::Degenerate(_) => "degenerate",
        Error::Validation(_) => "validation",
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = core_kind(&e);
        if e.is_validation() {
            Failure::Invalid { kind, message: e.to_string() }
        } else {
            Failure::Internal { kind, message: e.to_string() }
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Core(c) => c.into(),
            IngestError::Io { .. } => Failure::invalid("io", e.to_string()),
            IngestError::Header { .. } => Failure::invalid("schema", e.to_string()),
            _ => Failure::invalid("parse", e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::invalid("config", e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Text,
    Json,
    Csv,
}

struct Printed {
    stdout: String,
    stderr: String,
}

impl Printed {
    fn out(stdout: String) -> Self {
        Self { stdout, stderr: String::new() }
    }
}

/// Runs the command line `argv` (program name first).
pub fn dispatch<I, T>(argv: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Output { code: 0, stdout: e.render().to_string(), stderr: String::new() }
                }
                _ => failure_output(Failure::invalid("usage", e.render().to_string().trim_end())),
            };
        }
    };
    let format = if cli.json {
        Format::Json
    } else if cli.csv {
        Format::Csv
    } else {
        Format::Text
    };
    match run(cli.command, format, cli.workers) {
        Ok(p) => Output { code: 0, stdout: p.stdout, stderr: p.stderr },
        Err(f) => failure_output(f),
    }
}

fn failure_output(f: Failure) -> Output {
    let (code, kind, message) = match f {
        Failure::Invalid { kind, message } => (2, kind, message),
        Failure::Internal { kind, message } => (1, kind, message),
    };
    let body = json!({ "error": { "kind": kind, "message": message } });
    Output { code, stdout: String::new(), stderr: format!("{body}\n") }
}

/// A seed that differs between invocations.
pub fn fresh_seed() -> u64 {
    let mut h = RandomState::new().build_hasher();
    h.write_u128(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0));
    h.write_u32(std::process::id());
    h.finish()
}

fn executor(workers: usize) -> Result<RayonExecutor, Failure> {
    RayonExecutor::new(workers).map_err(|e| Failure::Internal { kind: "thread_pool", message: e.to_string() })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn key_value(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::invalid("usage", format!("expected KEY=VALUE, found `{s}`")))
}

fn read_pairs(path: &PathBuf) -> Result<Vec<(String, String)>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid("io", format!("{}: {e}", path.display())))?;
    Ok(config::parse_pairs(&text)?)
}

fn run(command: Command, format: Format, workers: usize) -> Result<Printed, Failure> {
    match command {
        Command::Bound { q1, q0 } => {
            Design::new(q1, q0)?;
            let b = size_bound(q1, q0);
            Ok(Printed::out(match format {
                Format::Text => format!("{b:.4}\n"),
                Format::Json => to_json(&json!({ "q1": q1, "q0": q0, "size_bound": b })),
                Format::Csv => format!("q1,q0,size_bound\n{q1},{q0},{b}\n"),
            }))
        }
        Command::Alpha { q1, q0, alpha, calibrate: false, .. } => {
            let entry = lookup_bar_alpha(q1, q0, alpha)?;
            Ok(Printed::out(entry_text(&entry, format, None)))
        }
        Command::Alpha { q1, q0, alpha, calibrate: true, seed, params, set } => {
            let design = Design::new(q1, q0)?;
            let mut pairs = match &params {
                Some(path) => read_pairs(path)?,
                None => Vec::new(),
            };
            for s in &set {
                let (k, v) = key_value(s)?;
                pairs.push((k.into(), v.into()));
            }
            let mut p = CalibrationParams::default();
            for (k, v) in &pairs {
                config::set_calibration(&mut p, k, v)?;
            }
            if let Some(s) = seed {
                p.seed = s;
            } else if !pairs.iter().any(|(k, _)| k == "seed") {
                p.seed = fresh_seed();
            }
            let exec = executor(workers)?;
            let cal = calibrate(&design, alpha, &p, &exec)?;
            let out = match format {
                Format::Json => to_json(&json!({
                    "entry": cal.entry,
                    "provenance": {
                        "seed": cal.params.seed,
                        "route": cal.route,
                        "params": cal.params,
                        "worst_variances": cal.worst_variances,
                        "worst_rate": cal.worst_rate,
                        "violating_rate": cal.violating_rate,
                        "trace": cal.trace,
                    }
                })),
                _ => entry_text(&cal.entry, format, Some(cal.params.seed)),
            };
            Ok(Printed::out(out))
        }
        Command::Test {
            input,
            mode,
            link,
            alpha,
            side,
            lambda,
            sample_m,
            enumeration_cap,
            bar_alpha,
            method,
            bootstrap_b,
            seed,
        } => {
            let side: Side = side.into();
            let schema = if mode == ModeArg::Estimates { Schema::Estimates } else { Schema::Raw };
            let ingested = ingest_csv(&input, schema)?;
            let (outcome, seed_used) = match method {
                MethodArg::Ap | MethodArg::Im => {
                    let est = cluster_estimates(&ingested, mode, link)?;
                    if method == MethodArg::Im {
                        (im_test(&est.shifted(lambda)?, alpha, side)?, None)
                    } else {
                        permutation_test(&est, alpha, side, lambda, sample_m, enumeration_cap, bar_alpha, seed)?
                    }
                }
                MethodArg::Bch | MethodArg::Wcb => {
                    let Ingested::Raw(data) = &ingested else {
                        return Err(Failure::invalid("schema", "pooled tests need observation-level data"));
                    };
                    if lambda != 0.0 {
                        return Err(Failure::invalid("usage", "--lambda applies to the permutation and IM tests only"));
                    }
                    let pooled = pooled_design(data)?;
                    if method == MethodArg::Bch {
                        (bch_test(&pooled, alpha, side)?, None)
                    } else {
                        let s = seed.unwrap_or_else(fresh_seed);
                        let mut rng = RngStream::new(s, 0);
                        (wild_cluster_bootstrap_test(&pooled, alpha, side, bootstrap_b, &mut rng)?, Some(s))
                    }
                }
            };
            Ok(Printed::out(outcome_text(&outcome, format, seed_used)))
        }
        Command::Power { delta, sigmas_treated, sigmas_control, delta_grid } => {
            let st = config::real_list("sigmas-treated", &sigmas_treated)?;
            let sc = config::real_list("sigmas-control", &sigmas_control)?;
            let spec = PowerSpec::new(delta, st, sc)?;
            if let Some(grid) = delta_grid {
                let mut s = String::from("delta,power_lower_bound\n");
                let mut rows = Vec::new();
                for d in config::real_list("delta-grid", &grid)? {
                    let b = power_lower_bound(&spec.with_delta(d)?)?;
                    let _ = writeln!(s, "{d},{b}");
                    rows.push(json!({ "delta": d, "power_lower_bound": b }));
                }
                return Ok(Printed::out(if format == Format::Json { to_json(&rows) } else { s }));
            }
            let b = power_lower_bound(&spec)?;
            Ok(Printed::out(match format {
                Format::Text => format!("{b:.6}\n"),
                Format::Json => to_json(&json!({
                    "delta": delta,
                    "sigmas_treated": spec.sigmas_treated(),
                    "sigmas_control": spec.sigmas_control(),
                    "power_lower_bound": b,
                })),
                Format::Csv => format!("delta,power_lower_bound\n{delta},{b}\n"),
            }))
        }
        Command::Simulate { study, config: path, set, out, seed } => {
            let mut pairs = match &path {
                Some(p) => read_pairs(p)?,
                None => Vec::new(),
            };
            for s in &set {
                let (k, v) = key_value(s)?;
                pairs.push((k.into(), v.into()));
            }
            let mut notes = String::new();
            let seed = match seed {
                Some(s) => s,
                None => match pairs.iter().rev().find(|(k, _)| k == "seed") {
                    Some((_, v)) => v.parse().map_err(|_| Failure::from(ConfigError::Value { key: "seed".into(), value: v.clone() }))?,
                    None => {
                        let s = fresh_seed();
                        let _ = writeln!(notes, "seed={s}");
                        s
                    }
                },
            };
            let exec = executor(workers)?;
            let result: StudyResult = match study {
                StudyArg::NormalLocation => {
                    let mut cfg = NormalLocationConfig::default();
                    for (k, v) in &pairs {
                        config::set_normal_location(&mut cfg, k, v)?;
                    }
                    cfg.seed = seed;
                    run_normal_location_study(&cfg, &exec)?
                }
                StudyArg::Did => {
                    let mut cfg = DidConfig::default();
                    for (k, v) in &pairs {
                        config::set_did(&mut cfg, k, v)?;
                    }
                    cfg.seed = seed;
                    run_did_study(&cfg, &exec)?
                }
            };
            let body = if format == Format::Json { to_json(&result) } else { result.to_csv() };
            match out {
                Some(p) => {
                    std::fs::write(&p, &body)
                        .map_err(|e| Failure::invalid("io", format!("{}: {e}", p.display())))?;
                    let _ = writeln!(notes, "wrote {} rows to {}", result.rows.len(), p.display());
                    Ok(Printed { stdout: String::new(), stderr: notes })
                }
                None => Ok(Printed { stdout: body, stderr: notes }),
            }
        }
    }
}

fn cluster_estimates(ingested: &Ingested, mode: ModeArg, link: LinkArg) -> Result<ClusterEstimates, Failure> {
    match (ingested, mode) {
        (Ingested::Estimates { estimates, .. }, _) => Ok(estimates.clone()),
        (Ingested::Raw(data), _) => {
            let spec = match mode {
                ModeArg::Intercept => EstimatorSpec::linear(Mode::Intercept),
                ModeArg::DidSlope => EstimatorSpec::linear(Mode::DidSlope),
                ModeArg::BinaryChoice => EstimatorSpec::binary(match link {
                    LinkArg::Logistic => Link::Logistic,
                    LinkArg::Probit => Link::Probit,
                }),
                ModeArg::Estimates => unreachable!("estimates mode reads the estimates schema"),
            };
            Ok(estimate(data, &spec)?)
        }
    }
}

fn pooled_design(data: &ClusterDataset) -> Result<PooledDesign, Failure> {
    Ok(if data.has_post() { PooledDesign::did_two_way(data)? } else { PooledDesign::treatment_dummy(data)? })
}

#[allow(clippy::too_many_arguments)]
fn permutation_test(
    est: &ClusterEstimates,
    alpha: f64,
    side: Side,
    lambda: f64,
    sample_m: usize,
    cap: u64,
    bar_alpha: Option<f64>,
    seed: Option<u64>,
) -> Result<(TestOutcome, Option<u64>), Failure> {
    let design = *est.design();
    let (set, seed_used) = if design.n_assignments() <= cap {
        (AssignmentSet::full(design, cap)?, None)
    } else {
        let s = seed.unwrap_or_else(fresh_seed);
        (AssignmentSet::sampled(design, sample_m, true, &mut RngStream::new(s, 0))?, Some(s))
    };
    let outcome = match bar_alpha {
        None => adjusted_test(est, alpha, side, lambda, &set)?,
        Some(b) => {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Domain { what: "bar_alpha", value: b }.into());
            }
            let n = design.n_assignments();
            let j = order_index_for_level(n, b);
            let entry = AlphaEntry {
                q1: design.q1(),
                q0: design.q0(),
                alpha: if side == Side::TwoSided { alpha / 2.0 } else { alpha },
                bar_alpha: b,
                order_index: j,
                n_assignments: n,
                source: EntrySource::Calibrated,
                starred: j + 1 == n,
            };
            adjusted_test_with_entry(est, &entry, side, lambda, &set)?
        }
    };
    Ok((outcome, seed_used))
}

fn entry_text(e: &AlphaEntry, format: Format, seed: Option<u64>) -> String {
    match format {
        Format::Json => to_json(e),
        Format::Csv => {
            let mut s = String::from("q1,q0,alpha,bar_alpha,order_index,n_assignments,source,starred");
            if seed.is_some() {
                s.push_str(",seed");
            }
            let source = if e.source == EntrySource::Tabulated { "tabulated" } else { "calibrated" };
            let _ = write!(
                s,
                "\n{},{},{},{},{},{},{},{}",
                e.q1, e.q0, e.alpha, e.bar_alpha, e.order_index, e.n_assignments, source, e.starred
            );
            if let Some(seed) = seed {
                let _ = write!(s, ",{seed}");
            }
            s.push('\n');
            s
        }
        Format::Text => {
            let mut s = format!(
                "bar_alpha = {:.4}\norder statistic {} of {}{}\nsource: {}\n",
                e.bar_alpha,
                e.order_index,
                e.n_assignments,
                if e.starred { " (second largest)" } else { "" },
                if e.source == EntrySource::Tabulated { "embedded table" } else { "calibration" },
            );
            if let Some(seed) = seed {
                let _ = writeln!(s, "seed = {seed}");
            }
            s
        }
    }
}

fn outcome_text(o: &TestOutcome, format: Format, seed: Option<u64>) -> String {
    let method = serde_json::to_value(o.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let decision = if o.decision.is_reject() { "reject" } else { "retain" };
    let p = match o.side {
        Side::Right => o.p_value_right,
        Side::Left => o.p_value_left,
        Side::TwoSided => o.p_value_two_sided,
    };
    match format {
        Format::Json => {
            let mut v = serde_json::to_value(o).expect("plain data serializes");
            if let (Some(s), Some(map)) = (seed, v.as_object_mut()) {
                map.insert("seed".into(), json!(s));
            }
            to_json(&v)
        }
        Format::Csv => format!(
            "method,statistic,critical_value,p_value,decision,alpha\n{method},{},{},{p},{decision},{}\n",
            o.statistic, o.critical_value, o.alpha
        ),
        Format::Text => {
            let mut s = format!("method: {method}\nstatistic: {:.6}\n", o.statistic);
            if o.critical_value.is_finite() {
                let _ = writeln!(s, "critical value: {:.6}", o.critical_value);
            }
            if let Some(b) = o.bar_alpha_used {
                let _ = writeln!(s, "adjusted level per tail: {b:.4}");
            }
            let _ = writeln!(s, "p-value: {p:.6}\ndecision at level {}: {decision}", o.alpha);
            if o.degenerate {
                s.push_str("all estimates equal\n");
            }
            if let Some(seed) = seed.or(o.seed) {
                let _ = writeln!(s, "seed: {seed}");
            }
            s
        }
    }
}
