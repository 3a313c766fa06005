use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::certificates::{certify_run, derive_constants, RunCertificate, TheoryConstants};
use crate::error::{invalid, IalmError, Result};
use crate::ialm::{
    build_schedule, ergodic_prefix, run, DriverOptions, ErrorMode, PenaltySetting, Schedule,
    ScheduleParams, SolveTrace,
};
use crate::problem::{feasibility_violation, ConvexProgram};
use crate::qcqp::instance::{qcqp_as_program, QcqpInstance};
use crate::qcqp::reference::Reference;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Constant penalty, constant error.
    Constant,
    /// Geometric penalty, constant error.
    Geometric,
    /// Geometric penalty, adaptive error.
    Adaptive,
    /// A single outer iteration.
    Penalty,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Penalty,
        Regime::Constant,
        Regime::Geometric,
        Regime::Adaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Constant => "constant",
            Regime::Geometric => "geometric",
            Regime::Adaptive => "adaptive",
            Regime::Penalty => "penalty",
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Regime::Geometric | Regime::Adaptive)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = IalmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Regime::Constant),
            "geometric" => Ok(Regime::Geometric),
            "adaptive" => Ok(Regime::Adaptive),
            "penalty" => Ok(Regime::Penalty),
            other => Err(invalid(format!(
                "unknown regime '{other}' (expected constant, geometric, adaptive or penalty)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub eps: f64,
    pub outer_iters: usize,
    pub c_beta: f64,
    /// Defaults to ‖u - l‖.
    pub c_eps: Option<f64>,
    pub sigma: f64,
    pub inner_max_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            outer_iters: 10,
            c_beta: 1.0,
            c_eps: None,
            sigma: 10.0,
            inner_max_iters: crate::apg::DEFAULT_MAX_ITERS,
        }
    }
}

impl ExperimentConfig {
    pub fn schedule_params(&self, regime: Regime, mu: f64, diameter: f64) -> ScheduleParams {
        let c_eps = self.c_eps.unwrap_or(diameter);
        let adaptive = if mu > 0.0 {
            ErrorMode::AdaptiveStronglyConvex
        } else {
            ErrorMode::AdaptiveConvex
        };
        let (setting, error_mode, outer_iters, sigma) = match regime {
            Regime::Constant => (
                PenaltySetting::Constant,
                ErrorMode::Constant,
                self.outer_iters,
                None,
            ),
            Regime::Geometric => (
                PenaltySetting::Geometric,
                ErrorMode::Constant,
                self.outer_iters,
                Some(self.sigma),
            ),
            Regime::Adaptive => (
                PenaltySetting::Geometric,
                adaptive,
                self.outer_iters,
                Some(self.sigma),
            ),
            Regime::Penalty => (PenaltySetting::Constant, ErrorMode::Constant, 1, None),
        };
        ScheduleParams {
            setting,
            error_mode,
            outer_iters,
            c_beta: self.c_beta,
            c_eps,
            eps: self.eps,
            sigma,
        }
    }
}

/// One line of a results table; counts are empty on row 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub outer_iter: usize,
    pub grad_evals: Option<u64>,
    pub fun_evals: Option<u64>,
    pub obj_gap: f64,
    pub feasibility: f64,
    pub avg_obj_gap: f64,
    pub avg_feasibility: f64,
    #[serde(skip)]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeResult {
    pub regime: Regime,
    pub schedule: Schedule,
    pub trace: SolveTrace,
    pub rows: Vec<TableRow>,
    pub certificate: Option<RunCertificate>,
}

/// Table rows for a finished trace. `f0_star` defaults to 0 when unknown.
pub fn table_rows(
    prog: &ConvexProgram,
    schedule: &Schedule,
    trace: &SolveTrace,
    f0_star: f64,
) -> Result<Vec<TableRow>> {
    let x0 = Vector::from_column_slice(&trace.x0);
    let gap = |x: &Vector| -> Result<f64> { Ok((prog.inspect(x)?.objective - f0_star).abs()) };
    let g0 = gap(&x0)?;
    let v0 = feasibility_violation(prog, &x0)?;
    let mut rows = vec![TableRow {
        outer_iter: 0,
        grad_evals: None,
        fun_evals: None,
        obj_gap: g0,
        feasibility: v0,
        avg_obj_gap: g0,
        avg_feasibility: v0,
        seconds: None,
    }];
    for (k, rec) in trace.records.iter().enumerate() {
        let xbar = ergodic_prefix(trace, schedule, k + 1)?;
        rows.push(TableRow {
            outer_iter: k + 1,
            grad_evals: Some(rec.evals.grad_evals),
            fun_evals: Some(rec.evals.fun_evals),
            obj_gap: (rec.objective - f0_star).abs(),
            feasibility: rec.feasibility,
            avg_obj_gap: gap(&xbar)?,
            avg_feasibility: feasibility_violation(prog, &xbar)?,
            seconds: None,
        });
    }
    Ok(rows)
}

pub fn theory_constants(
    prog: &ConvexProgram,
    c_eps: f64,
    reference: &Reference,
) -> Result<TheoryConstants> {
    Ok(derive_constants(prog, c_eps, &reference.y(), &reference.z())?.with_optimum(reference.f0))
}

/// Runs one regime from the zero primal-dual point.
pub fn run_regime(
    inst: &QcqpInstance,
    regime: Regime,
    cfg: &ExperimentConfig,
    reference: Option<&Reference>,
) -> Result<RegimeResult> {
    let prog = qcqp_as_program(inst)?;
    let c = prog.constants();
    let params = cfg.schedule_params(regime, c.mu, c.diameter);
    let schedule = build_schedule(&params, c.mu)?;
    let x0 = prog.regularizer().as_box().map_or_else(
        || Vector::zeros(prog.n()),
        |b| b.project(&Vector::zeros(prog.n())),
    );
    let opts = DriverOptions {
        inner_max_iters: cfg.inner_max_iters,
        inequality_only: false,
    };
    let started = std::time::Instant::now();
    let trace = run(
        &prog,
        &schedule,
        &x0,
        &Vector::zeros(prog.p()),
        &Vector::zeros(prog.m()),
        &opts,
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    let f0_star = reference.map_or(0.0, |r| r.f0);
    let mut rows = table_rows(&prog, &schedule, &trace, f0_star)?;
    if let Some(last) = rows.last_mut() {
        last.seconds = Some(elapsed);
    }
    let certificate = match reference {
        Some(r) => Some(certify_run(
            &prog,
            &schedule,
            &trace,
            &theory_constants(&prog, params.c_eps, r)?,
        )?),
        None => None,
    };
    Ok(RegimeResult {
        regime,
        schedule,
        trace,
        rows,
        certificate,
    })
}

pub fn run_experiment(
    inst: &QcqpInstance,
    regimes: &[Regime],
    cfg: &ExperimentConfig,
    reference: Option<&Reference>,
) -> Result<Vec<RegimeResult>> {
    regimes
        .iter()
        .map(|r| run_regime(inst, *r, cfg, reference))
        .collect()
}

/// Scientific notation with four decimals and a signed two-digit exponent.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.4e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub const CSV_HEADER: [&str; 7] = [
    "outer_iter",
    "grad_evals",
    "fun_evals",
    "obj_gap",
    "feasibility",
    "avg_obj_gap",
    "avg_feasibility",
];

/// Writes the table as CSV. The timing column is wall-clock and therefore
/// the only non-deterministic output; it is omitted unless requested.
pub fn write_csv<W: std::io::Write>(rows: &[TableRow], with_timing: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| IalmError::Unsupported(format!("csv output failed: {e}"));
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_timing {
        header.push("seconds_nondeterministic");
    }
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![
            r.outer_iter.to_string(),
            r.grad_evals.map_or(String::new(), |v| v.to_string()),
            r.fun_evals.map_or(String::new(), |v| v.to_string()),
            format_sci(r.obj_gap),
            format_sci(r.feasibility),
            format_sci(r.avg_obj_gap),
            format_sci(r.avg_feasibility),
        ];
        if with_timing {
            rec.push(r.seconds.map_or(String::new(), |s| format!("{s:.3}")));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
        .map_err(|e| IalmError::Unsupported(format!("csv output failed: {e}")))?;
    Ok(())
}

pub fn csv_string(rows: &[TableRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, false, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format_matches_tables() {
        assert_eq!(format_sci(19.949), "1.9949e+01");
        assert_eq!(format_sci(0.0), "0.0000e+00");
        assert_eq!(format_sci(6.9137e-6), "6.9137e-06");
        assert_eq!(format_sci(2709547.0), "2.7095e+06");
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("fast".parse::<Regime>().is_err());
    }
}
