//! Command-line front end: `generate`, `solve`, `bench`, `verify`.
//!
//! Exit codes: 0 success, 1 a must-hold bound or a verification check
//! failed, 2 usage or input errors, 3 other runtime failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{certify_run, kkt_residual, BoundCheck, EpsOptimality, IterationBudget};
use crate::error::IalmError;
use crate::ialm::{build_schedule, ergodic_average, update_multipliers, Schedule, SolveTrace};
use crate::problem::{feasibility_violation, positive_part_norm, CounterSnapshot};
use crate::qcqp::{
    generate_instance, qcqp_as_program, reference_solve, run_regime, theory_constants, write_csv,
    Convexity, ExperimentConfig, QcqpInstance, Reference, Regime, RegimeResult,
};
use crate::Vector;

pub const THREADS_ENV: &str = "IALM_THREADS";
const REFERENCE_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "ialm",
    version,
    about = "Inexact augmented Lagrangian solver and QCQP benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random QCQP instance as JSON.
    Generate(GenerateArgs),
    /// Solve an instance with one regime and print or write its table.
    Solve(SolveArgs),
    /// Run several regimes, write tables, traces and a certificate bundle.
    Bench(BenchArgs),
    /// Recheck a certificate bundle written by `bench`.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Clone)]
pub struct InstanceSpec {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, conflicts_with = "strongly_convex")]
    pub convex: bool,
    #[arg(long)]
    pub strongly_convex: bool,
    #[arg(long, default_value_t = 1.0)]
    pub q0_scale: f64,
}

impl InstanceSpec {
    fn convexity(&self) -> Convexity {
        if self.strongly_convex {
            Convexity::StronglyConvex
        } else {
            Convexity::Convex
        }
    }

    fn generate(&self) -> Result<QcqpInstance, CliError> {
        if self.n == 0 {
            return Err(CliError::Usage("--n must be at least 1".into()));
        }
        generate_instance(self.seed, self.n, self.m, self.convexity(), self.q0_scale)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub spec: InstanceSpec,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct MethodArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long = "K", default_value_t = 10)]
    pub outer_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c_beta: f64,
    /// Defaults to the box diameter.
    #[arg(long)]
    pub c_eps: Option<f64>,
    /// Growth factor of the geometric penalty (default 10).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = crate::apg::DEFAULT_MAX_ITERS)]
    pub max_inner: usize,
}

impl MethodArgs {
    fn config(&self, regimes: &[Regime]) -> Result<ExperimentConfig, CliError> {
        if self.sigma.is_some() && !regimes.iter().any(Regime::is_geometric) {
            return Err(CliError::Usage(
                "--sigma applies only to geometric regimes".into(),
            ));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{name} must be positive")))
            }
        };
        positive("--eps", self.eps)?;
        positive("--c-beta", self.c_beta)?;
        if let Some(c) = self.c_eps {
            positive("--c-eps", c)?;
        }
        if self.outer_iters == 0 || self.max_inner == 0 {
            return Err(CliError::Usage(
                "--K and --max-inner must be positive".into(),
            ));
        }
        let sigma = self.sigma.unwrap_or(10.0);
        if !(sigma > 1.0) {
            return Err(CliError::Usage("--sigma must exceed 1".into()));
        }
        Ok(ExperimentConfig {
            eps: self.eps,
            outer_iters: self.outer_iters,
            c_beta: self.c_beta,
            c_eps: self.c_eps,
            sigma,
            inner_max_iters: self.max_inner,
        })
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value = "geometric")]
    pub regime: String,
    #[command(flatten)]
    pub method: MethodArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the reference solve; gaps are then reported against 0.
    #[arg(long)]
    pub no_reference: bool,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Instance file; when absent the instance is generated from the flags below.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub spec: InstanceSpec,
    /// Comma-separated subset of penalty,constant,geometric,adaptive.
    #[arg(long, default_value = "penalty,constant,geometric,adaptive")]
    pub regimes: String,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_reference: bool,
    /// Adds a wall-clock column to the CSV files.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Directory written by `bench`.
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(Vec<String>),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Failed(names) => write!(f, "failed checks: {}", names.join(", ")),
        }
    }
}

fn runtime(e: IalmError) -> CliError {
    match e {
        IalmError::InvalidInstance(m) => CliError::Usage(format!("invalid instance: {m}")),
        IalmError::InvalidParameter(m) => CliError::Usage(m),
        other => CliError::Runtime(other.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn read_instance(path: &Path) -> Result<QcqpInstance, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    QcqpInstance::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn parse_regimes(s: &str) -> Result<Vec<Regime>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let r: Regime = part
            .parse()
            .map_err(|e: IalmError| CliError::Usage(e.to_string()))?;
        if !out.contains(&r) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no regimes selected".into()));
    }
    Ok(out)
}

fn csv_bytes(res: &RegimeResult, timing: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&res.rows, timing, &mut buf).expect("writing to memory");
    buf
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub regime: Regime,
    pub schedule: Schedule,
    pub totals: CounterSnapshot,
    pub inner_iters: usize,
    pub unverified: Vec<usize>,
    pub ergodic: Option<EpsOptimality>,
    pub last_iterate: Option<EpsOptimality>,
    pub budget: Option<IterationBudget>,
    pub checks: Vec<BoundCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub run_id: String,
    pub instance_seed: u64,
    pub config: ExperimentConfig,
    pub reference: Option<Reference>,
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub regime: Regime,
    pub schedule: Schedule,
    pub trace: SolveTrace,
}

fn trace_path(dir: &Path, regime: Regime) -> PathBuf {
    dir.join(format!("trace_{regime}.json"))
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    match threads {
        Some(t) if t > 0 => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

fn reference_for(inst: &QcqpInstance, skip: bool) -> Result<Option<Reference>, CliError> {
    if skip {
        return Ok(None);
    }
    reference_solve(inst, REFERENCE_TOL)
        .map(Some)
        .map_err(runtime)
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let inst = args.spec.generate()?;
    write_atomic(&args.out, inst.to_json().as_bytes())
}

pub fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let regime: Regime = args
        .regime
        .parse()
        .map_err(|e: IalmError| CliError::Usage(e.to_string()))?;
    let cfg = args.method.config(&[regime])?;
    let inst = read_instance(&args.instance)?;
    let reference = reference_for(&inst, args.no_reference)?;
    let res = run_regime(&inst, regime, &cfg, reference.as_ref()).map_err(runtime)?;
    let bytes = csv_bytes(&res, args.timing);
    match &args.out {
        Some(p) => write_atomic(p, &bytes)?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    }
    if !res.trace.all_verified() {
        eprintln!(
            "warning: inner iteration cap reached at outer iterations {:?}",
            res.trace.unverified()
        );
    }
    match &res.certificate {
        Some(c) if !c.passed() => Err(CliError::Failed(
            c.failures().iter().map(|f| f.label()).collect(),
        )),
        _ => Ok(()),
    }
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let regimes = parse_regimes(&args.regimes)?;
    let cfg = args.method.config(&regimes)?;
    let inst = match &args.instance {
        Some(p) => read_instance(p)?,
        None => args.spec.generate()?,
    };
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let reference = reference_for(&inst, args.no_reference)?;

    let results: Vec<Result<RegimeResult, IalmError>> = with_pool(|| {
        regimes
            .par_iter()
            .map(|r| run_regime(&inst, *r, &cfg, reference.as_ref()))
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for res in results {
        let res = res.map_err(runtime)?;
        write_atomic(
            &args.out.join(format!("{}.csv", res.regime)),
            &csv_bytes(&res, args.timing),
        )?;
        let tf = TraceFile {
            regime: res.regime,
            schedule: res.schedule.clone(),
            trace: res.trace.clone(),
        };
        let json = serde_json::to_vec_pretty(&tf).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&trace_path(&args.out, res.regime), &json)?;

        let report = report_for(&res);
        println!(
            "{:<10} K={:<3} inner={:<9} grad={:<9} fun={:<6} unverified={:?} checks={}",
            res.regime.name(),
            res.schedule.len(),
            res.trace.inner_iters(),
            res.trace.totals.grad_evals,
            res.trace.totals.fun_evals,
            res.trace.unverified(),
            match &res.certificate {
                Some(c) => format!(
                    "{}/{} satisfied",
                    c.checks.iter().filter(|b| b.satisfied).count(),
                    c.checks.len()
                ),
                None => "not evaluated".to_string(),
            }
        );
        failures.extend(
            report
                .checks
                .iter()
                .filter(|c| c.failed())
                .map(|c| format!("{}:{}", res.regime, c.label())),
        );
        runs.push(report);
    }
    if reference.is_none() {
        eprintln!("warning: no reference solution; bounds not evaluated");
    }
    let bundle = CertificateBundle {
        run_id: format!("seed{}-n{}-m{}", inst.meta.seed, inst.n, inst.m),
        instance_seed: inst.meta.seed,
        config: cfg,
        reference,
        runs,
    };
    let json = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&args.out.join("certificate.json"), &json)?;
    if args.instance.is_none() {
        write_atomic(&args.out.join("instance.json"), inst.to_json().as_bytes())?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(failures))
    }
}

fn report_for(res: &RegimeResult) -> RunReport {
    let (checks, ergodic, last_iterate, budget, passed) = match &res.certificate {
        Some(c) => (
            c.checks.clone(),
            c.ergodic,
            c.last_iterate,
            c.budget,
            c.passed(),
        ),
        None => (Vec::new(), None, None, None, true),
    };
    RunReport {
        regime: res.regime,
        schedule: res.schedule.clone(),
        totals: res.trace.totals,
        inner_iters: res.trace.inner_iters(),
        unverified: res.trace.unverified(),
        ergodic,
        last_iterate,
        budget,
        checks,
        passed,
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-12
}

/// Recomputes everything in a bench directory from the stored iterates.
pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let inst = read_instance(&args.instance)?;
    let cert_path = args.dir.join("certificate.json");
    let text = fs::read_to_string(&cert_path).map_err(|e| io_err(&cert_path, e))?;
    let bundle: CertificateBundle = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", cert_path.display())))?;
    let mut failures = Vec::new();
    let mut checked = 0usize;
    let mut fail = |ok: bool, name: String| {
        checked += 1;
        if !ok {
            failures.push(name);
        }
    };

    if let Some(r) = &bundle.reference {
        let prog = qcqp_as_program(&inst).map_err(runtime)?;
        let kkt = kkt_residual(&prog, &r.x(), &r.y(), &r.z()).map_err(runtime)?;
        fail(kkt.max() <= 1e-7, "reference_kkt".into());
        fail(
            close(inst.data().map_err(runtime)?.objective(&r.x()), r.f0),
            "reference_objective".into(),
        );
    } else {
        eprintln!("warning: certificate has no reference duals; bounds not evaluated");
    }

    for run in &bundle.runs {
        let tag = run.regime.name();
        let path = trace_path(&args.dir, run.regime);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let tf: TraceFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let prog = qcqp_as_program(&inst).map_err(runtime)?;
        if tf
            .trace
            .records
            .first()
            .is_some_and(|r| r.x.len() != prog.n())
        {
            return Err(CliError::Usage(format!(
                "{}: dimension differs from the instance",
                path.display()
            )));
        }

        let rebuilt = build_schedule(&tf.schedule.params, prog.constants().mu).map_err(runtime)?;
        let same = rebuilt.beta.len() == tf.schedule.beta.len()
            && rebuilt
                .beta
                .iter()
                .zip(&tf.schedule.beta)
                .chain(rebuilt.eps_k.iter().zip(&tf.schedule.eps_k))
                .chain(rebuilt.rho.iter().zip(&tf.schedule.rho))
                .all(|(a, b)| close(*a, *b));
        fail(
            same && tf.schedule == run.schedule,
            format!("{tag}:schedule"),
        );

        for (k, rec) in tf.trace.records.iter().enumerate() {
            let x = Vector::from_column_slice(&rec.x);
            let vals = prog.inspect(&x).map_err(runtime)?;
            let feas = feasibility_violation(&prog, &x).map_err(runtime)?;
            fail(
                close(vals.objective, rec.objective),
                format!("{tag}:record_objective[k={}]", k + 1),
            );
            fail(
                close(feas, rec.feasibility),
                format!("{tag}:record_feasibility[k={}]", k + 1),
            );
            fail(
                close(
                    positive_part_norm(&vals.constraints),
                    rec.constraint_violation,
                ),
                format!("{tag}:record_constraint_violation[k={}]", k + 1),
            );
            let (y, z) = tf.trace.multipliers(k);
            let updated = update_multipliers(&y, &z, &x, rec.beta, rec.rho, &prog);
            let ok = match updated {
                Ok((y1, z1)) => y1
                    .iter()
                    .zip(&rec.y)
                    .chain(z1.iter().zip(&rec.z))
                    .all(|(a, b)| close(*a, *b)),
                Err(_) => false,
            };
            fail(ok, format!("{tag}:multiplier_update[k={k}]"));
        }
        let xbar = ergodic_average(&tf.trace, &tf.schedule).map_err(runtime)?;
        fail(
            xbar.iter()
                .zip(&tf.trace.ergodic)
                .all(|(a, b)| close(*a, *b)),
            format!("{tag}:ergodic_average"),
        );

        if let Some(r) = &bundle.reference {
            let consts = theory_constants(&prog, tf.schedule.params.c_eps, r).map_err(runtime)?;
            let cert = certify_run(&prog, &tf.schedule, &tf.trace, &consts).map_err(runtime)?;
            fail(
                cert.checks.len() == run.checks.len(),
                format!("{tag}:check_count"),
            );
            for (fresh, stored) in cert.checks.iter().zip(&run.checks) {
                let same = fresh.name == stored.name
                    && fresh.k == stored.k
                    && close(fresh.lhs, stored.lhs)
                    && close(fresh.rhs, stored.rhs)
                    && fresh.satisfied == stored.satisfied;
                fail(same && !fresh.failed(), format!("{tag}:{}", fresh.label()));
            }
        }
    }

    println!("verified {checked} checks, {} failed", failures.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(failures))
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify(a),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
