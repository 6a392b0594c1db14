//! Command-line front end: argument parsing, engine dispatch and CSV/JSON
//! emission. Output depends only on the arguments, so identical runs write
//! identical bytes (the optional timing column aside).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::asymptotics::{self, SmoothFamily};
use crate::exact::{self, ExactResult};
use crate::families::{prob_vector, FamilyKind, FamilySpec, ProbVector};
use crate::limits::{self, LimitError, Verdict};
use crate::quadrature::{self, QuadratureConfig, QuadratureError};
use crate::simulator;

pub const SCHEMA: &str = "sibling-collector v1";
/// Quadrature cost guard for the random-vector experiment.
pub const EXPERIMENT_MAX_N: u64 = 200;

#[derive(Debug, Parser)]
#[command(name = "sibling", version, about = "Expected unfilled albums in the siblings coupon collector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// E[U_j^N] by an exact formula or by quadrature.
    Compute,
    /// Monte Carlo estimates of U_j^N and T_N.
    Simulate,
    /// The three-term asymptotic expansion for decaying families.
    Asympt,
    /// Limit as N → ∞ for growing families, with a finiteness verdict.
    Limit,
    /// All applicable engines side by side.
    Compare,
    /// Uniform versus random probability vectors.
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Auto,
    Exact,
    Alternating,
    Quadrature,
    UnitInterval,
    Delta,
    Log,
}

#[derive(Debug, clap::Args)]
pub struct Options {
    /// Family as inline JSON or a path to a JSON file.
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long = "N", global = true, value_parser = parse_count)]
    pub n: Option<u64>,
    /// Comma-separated ascending list of N.
    #[arg(long = "Nlist", global = true, value_delimiter = ',', value_parser = parse_count)]
    pub n_list: Vec<u64>,
    #[arg(long, global = true)]
    pub j: Option<u32>,
    /// Run every j from 2 to this value.
    #[arg(long, global = true)]
    pub jmax: Option<u32>,
    #[arg(long, global = true, value_parser = parse_count)]
    pub reps: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Relative tolerance for quadrature.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "SIBLING_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Method::Auto)]
    pub method: Method,
    /// Add a wall-clock column (breaks byte-reproducibility).
    #[arg(long, global = true)]
    pub timing: bool,
}

/// Accepts plain integers and integral scientific notation such as 1e4.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if f >= 0.0 && f.fract() == 0.0 && f < 1.8e19 {
        Ok(f as u64)
    } else {
        Err(format!("not a non-negative integer: {s}"))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

impl From<QuadratureError> for CliError {
    fn from(e: QuadratureError) -> Self {
        match e {
            QuadratureError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            other => config(other),
        }
    }
}

impl From<LimitError> for CliError {
    fn from(e: LimitError) -> Self {
        match e {
            LimitError::NonConvergence { .. } | LimitError::TruncationCap { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            other => config(other),
        }
    }
}

/// Validated settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub family: Option<FamilySpec>,
    pub n_list: Vec<u64>,
    pub j_list: Vec<u32>,
    pub method: Method,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub reps: Option<u64>,
    pub quad: QuadratureConfig,
    pub threads: Option<usize>,
    pub timing: bool,
}

fn load_family(src: &str) -> Result<FamilySpec, CliError> {
    let text = if src.trim_start().starts_with('{') {
        src.to_string()
    } else {
        std::fs::read_to_string(src)
            .map_err(|e| CliError::Config(format!("cannot read family file {src}: {e}")))?
    };
    let spec: FamilySpec =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad family JSON: {e}")))?;
    spec.validate().map_err(config)?;
    Ok(spec)
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let o = cli.opts;
        let family = o.family.as_deref().map(load_family).transpose()?;
        if family.is_none() && cli.command != Command::Experiment {
            return Err(CliError::Config("--family is required".into()));
        }
        let mut n_list = o.n_list.clone();
        if !n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Config("--Nlist must be strictly ascending".into()));
        }
        if let Some(n) = o.n {
            if !n_list.is_empty() {
                return Err(CliError::Config("give either --N or --Nlist, not both".into()));
            }
            n_list.push(n);
        }
        if n_list.is_empty() && cli.command != Command::Limit {
            return Err(CliError::Config("--N or --Nlist is required".into()));
        }
        if n_list.contains(&0) {
            return Err(CliError::Config("N must be at least 1".into()));
        }
        let j_list: Vec<u32> = match (o.j, o.jmax) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either --j or --jmax, not both".into()))
            }
            (Some(j), None) => vec![j],
            (None, Some(m)) => (2..=m).collect(),
            (None, None) => vec![2],
        };
        if j_list.is_empty() || j_list[0] < 2 {
            return Err(CliError::Config("j must be at least 2".into()));
        }
        let mut quad = QuadratureConfig::default();
        if let Some(t) = o.tol {
            quad.rel_tol = t;
            quad.abs_tol = quad.abs_tol.min(t * 1e-3);
        }
        quad.validate().map_err(config)?;
        if o.threads == Some(0) {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        if let Some(path) = &o.out {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "output directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        Ok(RunConfig {
            command: cli.command,
            family,
            n_list,
            j_list,
            method: o.method,
            out: o.out,
            format: o.format,
            seed: o.seed,
            reps: o.reps,
            quad,
            threads: o.threads,
            timing: o.timing,
        })
    }

    fn family(&self) -> &FamilySpec {
        self.family.as_ref().expect("checked in from_cli")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) if s.contains([',', '"', '\n']) => {
                format!("\"{}\"", s.replace('"', "\"\""))
            }
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Option<Value> {
        match self {
            Cell::Empty => None,
            Cell::Int(v) => Some(Value::from(*v)),
            Cell::Float(v) => Some(serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number)),
            Cell::Text(s) => Some(Value::from(s.as_str())),
        }
    }
}

/// Shortest round-trip text; exponent form away from moderate magnitudes.
fn format_float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::Float)
}

/// A command's result: named columns and rows of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(command: &'static str, columns: &[&'static str]) -> Self {
        Table {
            command,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn with_timing(&mut self, ms: Vec<f64>) {
        self.columns.push("ms");
        for (row, t) in self.rows.iter_mut().zip(ms) {
            row.push(Cell::Float((t * 1000.0).round() / 1000.0));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {SCHEMA}\n");
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut m = Map::new();
                for (c, cell) in self.columns.iter().zip(row) {
                    if let Some(v) = cell.json() {
                        m.insert((*c).to_string(), v);
                    }
                }
                Value::Object(m)
            })
            .collect();
        let mut top = Map::new();
        top.insert("schema".into(), Value::from(SCHEMA));
        top.insert("command".into(), Value::from(self.command));
        top.insert("rows".into(), Value::Array(rows));
        let mut s = serde_json::to_string_pretty(&Value::Object(top)).expect("plain JSON values");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Column lookup used by tests and callers reading results back.
    pub fn cell(&self, row: usize, column: &str) -> Option<&Cell> {
        let c = self.columns.iter().position(|&x| x == column)?;
        self.rows.get(row).map(|r| &r[c])
    }
}

/// A finished command: its table and the exit code it calls for.
#[derive(Debug)]
pub struct Outcome {
    pub table: Table,
    pub exit_code: i32,
}

fn probs(spec: &FamilySpec, n: u64) -> Result<ProbVector, CliError> {
    let n = usize::try_from(n).map_err(config)?;
    prob_vector(spec, n).map_err(config)
}

fn exact_for(spec: &FamilySpec, p: &ProbVector, n: u64, j: u32, method: Method) -> Option<ExactResult> {
    if matches!(spec.kind, FamilyKind::Equal) {
        return match method {
            Method::Alternating => exact::alternating_sum_result(n, j).ok(),
            _ => exact::hyperharmonic_result(n, j).ok(),
        };
    }
    let q = p.as_slice();
    match (n, j) {
        (1, _) => exact::hyperharmonic_result(1, j).ok(),
        (2, _) => exact::two_types(q[0], j).ok(),
        (3, 2) => exact::three_types_j2(q[0], q[1], q[2]).ok(),
        _ => None,
    }
}

fn label_row(spec: &FamilySpec) -> Cell {
    Cell::Text(spec.label())
}

fn cmd_compute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.family();
    let mut t = Table::new(
        "compute",
        &[
            "family",
            "N",
            "j",
            "method",
            "value_float",
            "error_estimate",
            "value_num",
            "value_den",
            "nodes",
        ],
    );
    let mut ms = Vec::new();
    for &n in &cfg.n_list {
        let p = probs(spec, n)?;
        for &j in &cfg.j_list {
            let start = Instant::now();
            let want_exact = match cfg.method {
                Method::Exact | Method::Alternating => true,
                Method::Auto => matches!(spec.kind, FamilyKind::Equal),
                Method::Quadrature | Method::UnitInterval => false,
                Method::Delta | Method::Log => {
                    return Err(CliError::Config(
                        "compute takes --method auto, exact, alternating, quadrature or unit-interval"
                            .into(),
                    ))
                }
            };
            if want_exact {
                let r = match (cfg.method, &spec.kind) {
                    (Method::Alternating, FamilyKind::Equal) => {
                        exact::alternating_sum_result(n, j).map_err(config)?
                    }
                    (Method::Alternating, _) => {
                        return Err(CliError::Config(
                            "the alternating sum applies to the equal family only".into(),
                        ))
                    }
                    _ => exact_for(spec, &p, n, j, cfg.method).ok_or_else(|| {
                        CliError::Config(format!(
                            "no exact formula for {} at N = {n}, j = {j}",
                            spec.label()
                        ))
                    })?,
                };
                t.push(vec![
                    label_row(spec),
                    Cell::Int(n),
                    Cell::Int(j.into()),
                    Cell::Text(r.formula.name().into()),
                    Cell::Float(r.as_float),
                    Cell::Empty,
                    Cell::Text(r.value.numer().to_string()),
                    Cell::Text(r.value.denom().to_string()),
                    Cell::Empty,
                ]);
            } else {
                let (name, r) = if cfg.method == Method::UnitInterval {
                    (
                        "unit_interval",
                        quadrature::expected_unfilled_on_unit_interval(&p, j, &cfg.quad)?,
                    )
                } else {
                    ("quadrature", quadrature::expected_unfilled(&p, j, &cfg.quad)?)
                };
                t.push(vec![
                    label_row(spec),
                    Cell::Int(n),
                    Cell::Int(j.into()),
                    Cell::Text(name.into()),
                    Cell::Float(r.value),
                    Cell::Float(r.error_estimate),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Int(r.nodes_used),
                ]);
            }
            ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    if cfg.timing {
        t.with_timing(ms);
    }
    Ok(Outcome {
        table: t,
        exit_code: 0,
    })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.family();
    let reps = cfg.reps.unwrap_or(10_000);
    let j_max = *cfg.j_list.iter().max().expect("non-empty");
    let mut t = Table::new(
        "simulate",
        &[
            "family", "N", "j", "reps", "seed", "mean_u", "se_u", "var_u", "mean_t", "se_t", "var_t",
        ],
    );
    let mut ms = Vec::new();
    for &n in &cfg.n_list {
        let p = probs(spec, n)?;
        let start = Instant::now();
        let est = simulator::estimate(&p, j_max, reps, cfg.seed).map_err(config)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        for &j in &cfg.j_list {
            let i = (j - 2) as usize;
            t.push(vec![
                label_row(spec),
                Cell::Int(n),
                Cell::Int(j.into()),
                Cell::Int(reps),
                Cell::Int(cfg.seed),
                Cell::Float(est.mean_u[i]),
                Cell::Float(est.se_u[i]),
                Cell::Float(est.var_u[i]),
                Cell::Float(est.mean_t),
                Cell::Float(est.se_t),
                Cell::Float(est.var_t),
            ]);
            ms.push(elapsed);
        }
    }
    if cfg.timing {
        t.with_timing(ms);
    }
    Ok(Outcome {
        table: t,
        exit_code: 0,
    })
}

fn smooth(spec: &FamilySpec) -> Result<SmoothFamily, CliError> {
    SmoothFamily::try_from(spec).map_err(config)
}

fn expansion(
    fam: &SmoothFamily,
    n: u64,
    j: u32,
    method: Method,
) -> Result<asymptotics::ExpansionTerms, asymptotics::AsymptoticError> {
    match method {
        Method::Log => asymptotics::log_form(fam, n as f64, j),
        _ => asymptotics::delta_form(fam, n as f64, j),
    }
}

fn cmd_asympt(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.family();
    let fam = smooth(spec)?;
    if !matches!(cfg.method, Method::Auto | Method::Delta | Method::Log) {
        return Err(CliError::Config("asympt takes --method delta or log".into()));
    }
    let name = if cfg.method == Method::Log { "log" } else { "delta" };
    let mut t = Table::new(
        "asympt",
        &[
            "family",
            "N",
            "j",
            "method",
            "delta",
            "term0",
            "term1",
            "term2",
            "value",
            "remainder_order",
        ],
    );
    for &n in &cfg.n_list {
        for &j in &cfg.j_list {
            let e = expansion(&fam, n, j, cfg.method).map_err(config)?;
            t.push(vec![
                label_row(spec),
                Cell::Int(n),
                Cell::Int(j.into()),
                Cell::Text(name.into()),
                Cell::Float(e.delta),
                Cell::Float(e.term0),
                Cell::Float(e.term1),
                Cell::Float(e.term2),
                Cell::Float(e.value),
                Cell::Text(e.remainder_order.into()),
            ]);
        }
    }
    Ok(Outcome {
        table: t,
        exit_code: 0,
    })
}

fn cmd_limit(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.family();
    let profile = limits::growth_profile(spec)?;
    let s_cell = match profile.s_at_x_alpha {
        limits::SAtRadius::Finite(v) => Cell::Float(v),
        limits::SAtRadius::Infinite => Cell::Text("infinite".into()),
        limits::SAtRadius::NotApplicable => Cell::Empty,
    };
    let mut t = Table::new(
        "limit",
        &[
            "family",
            "j",
            "x_alpha",
            "s_at_x_alpha",
            "verdict",
            "nu_hat",
            "I_value",
            "tail_bound",
            "quad_error",
            "truncation_k",
            "witness_last",
        ],
    );
    let mut exit_code = 0;
    for &j in &cfg.j_list {
        let verdict = limits::finiteness_diagnostic(spec, j, limits::DEFAULT_HORIZON)?;
        let nu_hat = match &verdict {
            Verdict::FiniteByCounting { nu_hat } => Some(*nu_hat),
            _ => None,
        };
        let mut row = vec![
            label_row(spec),
            Cell::Int(j.into()),
            Cell::Float(profile.x_alpha),
            s_cell.clone(),
            Cell::Text(verdict.name().into()),
            opt(nu_hat),
        ];
        match limits::limit_integral_i(spec, j, &cfg.quad) {
            Ok(r) => {
                row.extend([
                    opt(r.value.finite()),
                    Cell::Float(r.tail_bound),
                    Cell::Float(r.quad_error),
                    Cell::Int(r.truncation_k),
                    Cell::Empty,
                ]);
            }
            Err(LimitError::DiagnosedDivergent { witness }) => {
                eprintln!("j = {j}: divergence diagnosed, not proven ({witness})");
                exit_code = 4;
                row.extend([
                    Cell::Text("divergent".into()),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    opt(witness.partial_sums.last().copied()),
                ]);
            }
            Err(e) => return Err(e.into()),
        }
        t.push(row);
    }
    Ok(Outcome { table: t, exit_code })
}

fn cmd_compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.family();
    let reps = cfg.reps.unwrap_or(10_000);
    let fam = SmoothFamily::try_from(spec).ok();
    let mut t = Table::new(
        "compare",
        &[
            "family",
            "N",
            "j",
            "exact",
            "quadrature",
            "quad_err",
            "asymptotic",
            "sim_mean",
            "sim_se",
            "quad_minus_exact",
            "asympt_rel_gap",
            "sim_z",
        ],
    );
    let mut ms = Vec::new();
    for &n in &cfg.n_list {
        let p = probs(spec, n)?;
        let j_max = *cfg.j_list.iter().max().expect("non-empty");
        let start = Instant::now();
        let sim = if reps > 0 {
            Some(simulator::estimate(&p, j_max, reps, cfg.seed).map_err(config)?)
        } else {
            None
        };
        let sim_ms = start.elapsed().as_secs_f64() * 1e3;
        for &j in &cfg.j_list {
            let start = Instant::now();
            let ex = exact_for(spec, &p, n, j, Method::Auto).map(|r| r.as_float);
            let q = quadrature::expected_unfilled(&p, j, &cfg.quad)?;
            let asy = fam
                .as_ref()
                .and_then(|f| expansion(f, n, j, cfg.method).ok())
                .map(|e| e.value);
            let (sm, se) = match &sim {
                Some(s) => (Some(s.mean_u_at(j)), Some(s.se_u_at(j))),
                None => (None, None),
            };
            let z = match (sm, se) {
                (Some(m), Some(s)) if s > 0.0 => Some((m - q.value) / s),
                _ => None,
            };
            t.push(vec![
                label_row(spec),
                Cell::Int(n),
                Cell::Int(j.into()),
                opt(ex),
                Cell::Float(q.value),
                Cell::Float(q.error_estimate),
                opt(asy),
                opt(sm),
                opt(se),
                opt(ex.map(|e| q.value - e)),
                opt(asy.map(|a| (q.value - a).abs() / q.value)),
                opt(z),
            ]);
            ms.push(sim_ms + start.elapsed().as_secs_f64() * 1e3);
        }
    }
    if cfg.timing {
        t.with_timing(ms);
    }
    Ok(Outcome {
        table: t,
        exit_code: 0,
    })
}

/// A uniform draw from the probability simplex: normalized Exp(1) samples,
/// i.e. a symmetric Dirichlet with concentration 1.
pub fn dirichlet_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            e.max(f64::MIN_POSITIVE)
        })
        .collect();
    let s: f64 = x.iter().sum();
    for v in &mut x {
        *v /= s;
    }
    x
}

/// Uniform value, largest sampled value, its gap and the violation count
/// for one (N, j). A sample violates only if it beats the uniform value by
/// more than the combined quadrature error budget.
pub fn experiment_one(
    n: u64,
    j: u32,
    trials: u64,
    seed: u64,
    quad: &QuadratureConfig,
) -> Result<(f64, f64, u64), CliError> {
    if n > EXPERIMENT_MAX_N {
        return Err(CliError::Config(format!(
            "experiment needs N <= {EXPERIMENT_MAX_N}, got {n}"
        )));
    }
    if trials == 0 {
        return Err(CliError::Config("experiment needs at least one trial".into()));
    }
    let uni = quadrature::expected_unfilled(&ProbVector::uniform(n as usize), j, quad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((n << 8) | u64::from(j));
    let mut best = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let p = ProbVector::new(dirichlet_sample(n as usize, &mut rng)).map_err(config)?;
        let r = quadrature::expected_unfilled(&p, j, quad)?;
        let slack = 10.0 * (uni.error_estimate + r.error_estimate + quad.rel_tol * uni.value.abs());
        if r.value > uni.value + slack {
            violations += 1;
        }
        best = best.max(r.value);
    }
    Ok((uni.value, best, violations))
}

fn cmd_experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let trials = cfg.reps.unwrap_or(1000);
    let mut t = Table::new(
        "experiment",
        &[
            "N",
            "j",
            "trials",
            "seed",
            "uniform",
            "max_sampled",
            "max_gap",
            "violations",
        ],
    );
    let mut ms = Vec::new();
    for &n in &cfg.n_list {
        for &j in &cfg.j_list {
            let start = Instant::now();
            let (uni, best, violations) = experiment_one(n, j, trials, cfg.seed, &cfg.quad)?;
            t.push(vec![
                Cell::Int(n),
                Cell::Int(j.into()),
                Cell::Int(trials),
                Cell::Int(cfg.seed),
                Cell::Float(uni),
                Cell::Float(best),
                Cell::Float(best - uni),
                Cell::Int(violations),
            ]);
            ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    if cfg.timing {
        t.with_timing(ms);
    }
    Ok(Outcome {
        table: t,
        exit_code: 0,
    })
}

/// Runs a validated configuration and returns its table.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let work = || match cfg.command {
        Command::Compute => cmd_compute(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Asympt => cmd_asympt(cfg),
        Command::Limit => cmd_limit(cfg),
        Command::Compare => cmd_compare(cfg),
        Command::Experiment => cmd_experiment(cfg),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(config)?
            .install(work),
        None => work(),
    }
}

/// Parses arguments, runs, writes output and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_cli(cli: Cli) -> Result<i32, CliError> {
    let cfg = RunConfig::from_cli(cli)?;
    let outcome = execute(&cfg)?;
    let text = outcome.table.render(cfg.format);
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(outcome.exit_code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig, CliError> {
        let mut v = vec!["sibling"];
        v.extend_from_slice(args);
        RunConfig::from_cli(Cli::try_parse_from(v).map_err(config)?)
    }

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("10000").unwrap(), 10_000);
        assert_eq!(parse_count("1e4").unwrap(), 10_000);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn nlist_must_ascend() {
        let e = cfg(&["compute", "--family", r#"{"kind":"equal"}"#, "--Nlist", "10,5"]);
        assert!(matches!(e, Err(CliError::Config(_))));
        let c = cfg(&["compute", "--family", r#"{"kind":"equal"}"#, "--Nlist", "5,10"]).unwrap();
        assert_eq!(c.n_list, vec![5, 10]);
    }

    #[test]
    fn jmax_expands_range() {
        let c = cfg(&["compute", "--family", r#"{"kind":"equal"}"#, "--N", "4", "--jmax", "4"]).unwrap();
        assert_eq!(c.j_list, vec![2, 3, 4]);
        assert!(cfg(&["compute", "--family", r#"{"kind":"equal"}"#, "--N", "4", "--j", "1"]).is_err());
    }

    #[test]
    fn family_is_required_except_for_experiment() {
        assert!(cfg(&["compute", "--N", "4"]).is_err());
        assert!(cfg(&["experiment", "--N", "4"]).is_ok());
    }

    #[test]
    fn bad_family_json_is_config_error() {
        let e = cfg(&["compute", "--family", r#"{"kind":"zipf","p":-1}"#, "--N", "4"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn exact_row_shape() {
        let c = cfg(&["compute", "--family", r#"{"kind":"equal"}"#, "--N", "10", "--format", "json"]).unwrap();
        let out = execute(&c).unwrap();
        let v: Value = serde_json::from_str(&out.table.to_json()).unwrap();
        let row = v["rows"][0].as_object().unwrap();
        let mut keys: Vec<&str> = row.keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["N", "family", "j", "method", "value_den", "value_float", "value_num"]);
        assert_eq!(row["value_num"], "7381");
        assert_eq!(row["value_den"], "2520");
    }

    #[test]
    fn csv_has_versioned_header_and_blank_cells() {
        let c = cfg(&["compare", "--family", r#"{"kind":"linear"}"#, "--N", "20", "--reps", "0"]).unwrap();
        let csv = execute(&c).unwrap().table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# sibling-collector v1"));
        assert!(lines.next().unwrap().starts_with("family,N,j,exact,quadrature"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("linear,20,2,,"), "{row}");
    }

    #[test]
    fn text_cells_are_quoted_when_needed() {
        assert_eq!(Cell::Text("a,b".into()).csv(), "\"a,b\"");
        assert_eq!(Cell::Text("a\"b".into()).csv(), "\"a\"\"b\"");
        assert_eq!(Cell::Text("x,\"y\"".into()).csv(), "\"x,\"\"y\"\"\"");
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.0, 1.5, -2.25e-15, 6.02e23, 1e-4, 123456.789] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(1.7763568394002505e-15), "1.7763568394002505e-15");
    }

    #[test]
    fn dirichlet_samples_lie_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..20 {
            let p = dirichlet_sample(n, &mut rng);
            assert!(p.iter().all(|&x| x > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn experiment_guards() {
        let q = QuadratureConfig::default();
        assert!(matches!(experiment_one(201, 2, 1, 1, &q), Err(CliError::Config(_))));
        assert!(experiment_one(5, 2, 0, 1, &q).is_err());
        let (u, best, v) = experiment_one(1, 2, 5, 1, &q).unwrap();
        assert!((u - best).abs() < 1e-9 && v == 0);
    }
}
