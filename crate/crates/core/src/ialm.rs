//! Inexact augmented Lagrangian method: schedules, outer loop, trace.

use serde::{Deserialize, Serialize};

use crate::apg::{self, ApgConfig, ApgStatus, Composite, StopRule, DEFAULT_MAX_ITERS};
use crate::augmented::{al_evaluate, lipschitz_estimate};
use crate::error::{check_dim, invalid, IalmError, Result};
use crate::problem::{feasibility_violation, positive_part_norm, ConvexProgram, CounterSnapshot};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltySetting {
    Constant,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMode {
    Constant,
    AdaptiveConvex,
    AdaptiveStronglyConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub setting: PenaltySetting,
    pub error_mode: ErrorMode,
    pub outer_iters: usize,
    pub c_beta: f64,
    pub c_eps: f64,
    pub eps: f64,
    /// Growth factor, used by the geometric setting only.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub params: ScheduleParams,
    /// β_g for the geometric setting.
    pub beta_g: Option<f64>,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub eps_k: Vec<f64>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn rho_sum(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// Σ ρ_k ε_k.
    pub fn weighted_error_sum(&self) -> f64 {
        self.rho.iter().zip(&self.eps_k).map(|(r, e)| r * e).sum()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

pub fn build_schedule(params: &ScheduleParams, mu: f64) -> Result<Schedule> {
    let k = params.outer_iters;
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    positive("C_beta", params.c_beta)?;
    positive("C_eps", params.c_eps)?;
    positive("eps", params.eps)?;
    if params.error_mode == ErrorMode::AdaptiveStronglyConvex && !(mu > 0.0) {
        return Err(invalid(
            "the strongly convex adaptive error schedule needs mu > 0",
        ));
    }
    let total = params.c_beta / params.eps;
    let (beta_g, beta) = match params.setting {
        PenaltySetting::Constant => {
            if params.sigma.is_some() {
                return Err(invalid("sigma applies only to the geometric setting"));
            }
            (None, vec![total / k as f64; k])
        }
        PenaltySetting::Geometric => {
            let sigma = params
                .sigma
                .ok_or_else(|| invalid("the geometric setting needs sigma"))?;
            if !(sigma > 1.0 && sigma.is_finite()) {
                return Err(invalid(format!("sigma must exceed 1, got {sigma}")));
            }
            let bg = total * (sigma - 1.0) / (sigma.powi(k as i32) - 1.0);
            if !(bg > 0.0 && bg.is_finite()) {
                return Err(IalmError::NonFinite("beta_g"));
            }
            (
                Some(bg),
                (0..k).map(|t| bg * sigma.powi(t as i32)).collect(),
            )
        }
    };
    let half = params.c_eps / 2.0;
    let eps_k = match params.error_mode {
        ErrorMode::Constant => vec![params.eps / 2.0 * params.c_eps / params.c_beta; k],
        ErrorMode::AdaptiveConvex => {
            let s: f64 = beta.iter().map(|b| b.powf(2.0 / 3.0)).sum();
            beta.iter().map(|b| half / (b.cbrt() * s)).collect()
        }
        ErrorMode::AdaptiveStronglyConvex => {
            let s: f64 = beta.iter().map(|b| b.sqrt()).sum();
            beta.iter().map(|b| half / (b.sqrt() * s)).collect()
        }
    };
    Ok(Schedule {
        params: params.clone(),
        beta_g,
        rho: beta.clone(),
        beta,
        eps_k,
    })
}

/// y + ρ(Ax - b) and z_i + ρ max(-z_i/β, f_i(x)). Costs one function evaluation.
pub fn update_multipliers(
    y: &Vector,
    z: &Vector,
    x_new: &Vector,
    beta: f64,
    rho: f64,
    prog: &ConvexProgram,
) -> Result<(Vector, Vector)> {
    check_dim("equality multipliers", prog.p(), y.len())?;
    check_dim("inequality multipliers", prog.m(), z.len())?;
    positive("beta", beta)?;
    positive("rho", rho)?;
    if z.iter().any(|v| *v < 0.0) {
        return Err(invalid("inequality multipliers must be nonnegative"));
    }
    let r = prog.affine_residual(x_new)?;
    let vals = prog.eval_values(x_new)?;
    let y_new = y + rho * r;
    let z_new = Vector::from_iterator(
        z.len(),
        z.iter().zip(&vals.constraints).map(|(zi, fi)| {
            if -zi / beta >= *fi {
                zi * (1.0 - rho / beta)
            } else {
                zi + rho * fi
            }
        }),
    );
    Ok((y_new, z_new))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverOptions {
    pub inner_max_iters: usize,
    /// Reject programs with an equality block.
    pub inequality_only: bool,
}

impl Default for DriverOptions {
    fn default() -> Self {
        Self {
            inner_max_iters: DEFAULT_MAX_ITERS,
            inequality_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub k: usize,
    pub beta: f64,
    pub rho: f64,
    pub eps_k: f64,
    pub inner_tol: f64,
    /// L(z^k) used as the inner step size.
    pub lipschitz: f64,
    pub inner_iters: usize,
    pub stop_metric: f64,
    pub verified: bool,
    pub evals: CounterSnapshot,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub objective: f64,
    pub feasibility: f64,
    pub constraint_violation: f64,
    /// Σ ψ_{β_k}(f_i(x^{k+1}), z_i^k).
    pub psi_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
    pub records: Vec<OuterRecord>,
    pub totals: CounterSnapshot,
    pub ergodic: Vec<f64>,
}

impl SolveTrace {
    pub fn all_verified(&self) -> bool {
        self.records.iter().all(|r| r.verified)
    }

    pub fn unverified(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| !r.verified)
            .map(|r| r.k)
            .collect()
    }

    pub fn inner_iters(&self) -> usize {
        self.records.iter().map(|r| r.inner_iters).sum()
    }

    pub fn last_x(&self) -> Vector {
        match self.records.last() {
            Some(r) => Vector::from_column_slice(&r.x),
            None => Vector::from_column_slice(&self.x0),
        }
    }

    /// (y^k, z^k) for k = 0..=K.
    pub fn multipliers(&self, k: usize) -> (Vector, Vector) {
        if k == 0 {
            (
                Vector::from_column_slice(&self.y0),
                Vector::from_column_slice(&self.z0),
            )
        } else {
            let r = &self.records[k - 1];
            (
                Vector::from_column_slice(&r.y),
                Vector::from_column_slice(&r.z),
            )
        }
    }
}

struct AlSubproblem<'a> {
    prog: &'a ConvexProgram,
    beta: f64,
    y: &'a Vector,
    z: &'a Vector,
}

impl Composite for AlSubproblem<'_> {
    fn smooth_grad(&self, x: &Vector, grad: &mut Vector) -> Result<f64> {
        let ev = al_evaluate(self.prog, self.beta, x, self.y, self.z, true)?;
        let h = self.prog.regularizer().value(x);
        grad.copy_from(ev.smooth_grad.as_ref().expect("gradient requested"));
        Ok(ev.smooth_value(h))
    }

    fn smooth_value(&self, x: &Vector) -> Result<f64> {
        let ev = al_evaluate(self.prog, self.beta, x, self.y, self.z, false)?;
        Ok(ev.smooth_value(self.prog.regularizer().value(x)))
    }

    fn prox(&self, point: &Vector, step: f64) -> Result<Vector> {
        self.prog.prox(point, step)
    }

    fn nonsmooth_value(&self, x: &Vector) -> f64 {
        self.prog.regularizer().value(x)
    }

    fn stationarity(&self, x: &Vector, grad: &Vector) -> Option<f64> {
        self.prog.regularizer().stationarity(x, grad)
    }
}

pub fn run(
    prog: &ConvexProgram,
    schedule: &Schedule,
    x0: &Vector,
    y0: &Vector,
    z0: &Vector,
    opts: &DriverOptions,
) -> Result<SolveTrace> {
    check_dim("initial point", prog.n(), x0.len())?;
    check_dim("equality multipliers", prog.p(), y0.len())?;
    check_dim("inequality multipliers", prog.m(), z0.len())?;
    if z0.iter().any(|v| *v < 0.0) {
        return Err(invalid("z0 must be nonnegative"));
    }
    if !prog.regularizer().contains(x0) {
        return Err(invalid("x0 must lie in X"));
    }
    if opts.inequality_only && prog.p() > 0 {
        return Err(invalid(
            "inequality-only mode requires an empty equality block; transform equalities first",
        ));
    }
    let diameter = prog.constants().diameter;
    let mu = prog.constants().mu;
    let start = prog.counters().snapshot();

    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut z = z0.clone();
    let mut records = Vec::with_capacity(schedule.len());
    for k in 0..schedule.len() {
        let before = prog.counters().snapshot();
        let (beta, rho, eps_k) = (schedule.beta[k], schedule.rho[k], schedule.eps_k[k]);
        let lipschitz = lipschitz_estimate(prog, beta, &z)?;
        let inner_tol = eps_k / diameter;
        let cfg = ApgConfig::new(lipschitz, mu, StopRule::GradientMapNorm(inner_tol))?
            .with_max_iters(opts.inner_max_iters);
        let sub = AlSubproblem {
            prog,
            beta,
            y: &y,
            z: &z,
        };
        let res = apg::solve(&sub, &cfg, &x)?;
        let x_new = res.x;

        let vals = prog.inspect(&x_new)?;
        let psi_sum = vals
            .constraints
            .iter()
            .zip(z.iter())
            .map(|(f, zi)| crate::augmented::psi_unchecked(beta, *f, *zi))
            .sum();
        let (y_new, z_new) = update_multipliers(&y, &z, &x_new, beta, rho, prog)?;
        let evals = prog.counters().snapshot() - before;
        records.push(OuterRecord {
            k,
            beta,
            rho,
            eps_k,
            inner_tol,
            lipschitz,
            inner_iters: res.iters_used,
            stop_metric: res.final_stop_metric,
            verified: res.status == ApgStatus::Converged,
            evals,
            x: x_new.as_slice().to_vec(),
            y: y_new.as_slice().to_vec(),
            z: z_new.as_slice().to_vec(),
            objective: vals.objective,
            feasibility: feasibility_violation(prog, &x_new)?,
            constraint_violation: positive_part_norm(&vals.constraints),
            psi_sum,
        });
        x = x_new;
        y = y_new;
        z = z_new;
    }
    let mut trace = SolveTrace {
        x0: x0.as_slice().to_vec(),
        y0: y0.as_slice().to_vec(),
        z0: z0.as_slice().to_vec(),
        records,
        totals: prog.counters().snapshot() - start,
        ergodic: Vec::new(),
    };
    trace.ergodic = ergodic_average(&trace, schedule)?.as_slice().to_vec();
    Ok(trace)
}

/// x̄^K = Σ ρ_t x^{t+1} / Σ ρ_t.
pub fn ergodic_average(trace: &SolveTrace, schedule: &Schedule) -> Result<Vector> {
    ergodic_prefix(trace, schedule, trace.records.len())
}

/// Weighted average of the first `k` iterates x^1..x^k.
pub fn ergodic_prefix(trace: &SolveTrace, schedule: &Schedule, k: usize) -> Result<Vector> {
    if k == 0 || trace.records.is_empty() {
        return Err(IalmError::EmptyTrace);
    }
    if k > trace.records.len() || k > schedule.rho.len() {
        return Err(invalid(format!("prefix {k} longer than the trace")));
    }
    let n = trace.records[0].x.len();
    let mut acc = Vector::zeros(n);
    let mut weight = 0.0;
    for (rec, rho) in trace.records[..k].iter().zip(&schedule.rho) {
        acc.axpy(*rho, &Vector::from_column_slice(&rec.x), 1.0);
        weight += rho;
    }
    Ok(acc / weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{BoxSet, ProblemConstants, QuadraticFunction};
    use crate::Matrix;
    use std::sync::Arc;

    fn params(setting: PenaltySetting, mode: ErrorMode, k: usize) -> ScheduleParams {
        ScheduleParams {
            setting,
            error_mode: mode,
            outer_iters: k,
            c_beta: 1.0,
            c_eps: 2.0,
            eps: 1e-3,
            sigma: (setting == PenaltySetting::Geometric).then_some(10.0),
        }
    }

    #[test]
    fn constant_schedule() {
        let s = build_schedule(
            &params(PenaltySetting::Constant, ErrorMode::Constant, 10),
            0.0,
        )
        .unwrap();
        assert!(s.beta.iter().all(|b| (b - 100.0).abs() < 1e-12));
        assert!((s.rho_sum() - 1000.0).abs() < 1e-9);
        assert!((s.weighted_error_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_schedule() {
        let s = build_schedule(
            &params(PenaltySetting::Geometric, ErrorMode::AdaptiveConvex, 10),
            0.0,
        )
        .unwrap();
        let bg = s.beta_g.unwrap();
        assert!((bg - 9.0000000009e-7).abs() < 1e-18);
        assert!((s.beta[9] - 900.0000001).abs() < 1e-6);
        assert!((s.rho_sum() - 1000.0).abs() < 1e-9 * 1000.0);
        assert!((s.weighted_error_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejections() {
        assert!(build_schedule(
            &params(
                PenaltySetting::Constant,
                ErrorMode::AdaptiveStronglyConvex,
                3
            ),
            0.0
        )
        .is_err());
        let mut p = params(PenaltySetting::Geometric, ErrorMode::Constant, 3);
        p.sigma = Some(1.0);
        assert!(build_schedule(&p, 0.0).is_err());
        p.sigma = None;
        assert!(build_schedule(&p, 0.0).is_err());
        let mut p = params(PenaltySetting::Constant, ErrorMode::Constant, 3);
        p.sigma = Some(2.0);
        assert!(build_schedule(&p, 0.0).is_err());
        assert!(build_schedule(
            &params(PenaltySetting::Constant, ErrorMode::Constant, 0),
            0.0
        )
        .is_err());
    }

    fn one_constraint_program() -> ConvexProgram {
        let n = 2;
        let g =
            QuadraticFunction::new(Some(Matrix::identity(n, n)), Vector::zeros(n), 0.0).unwrap();
        let f = QuadraticFunction::affine(Vector::zeros(n), 0.0);
        let consts = ProblemConstants {
            mu: 1.0,
            l0: 1.0,
            constraint_lipschitz: vec![0.0],
            constraint_bounds: vec![1.0],
            diameter: 2.0 * 2f64.sqrt(),
        };
        ConvexProgram::builder(
            Arc::new(g),
            Arc::new(BoxSet::symmetric(n, 1.0).unwrap()),
            consts,
        )
        .constraint(Arc::new(f))
        .build()
        .unwrap()
    }

    #[test]
    fn multiplier_update_examples() {
        let prog = one_constraint_program();
        let x = Vector::zeros(2);
        // f(x) = 0 leaves z unchanged
        let (_, z) = update_multipliers(
            &Vector::zeros(0),
            &Vector::from_element(1, 1.3),
            &x,
            2.0,
            2.0,
            &prog,
        )
        .unwrap();
        assert_eq!(z[0], 1.3);
        assert!(update_multipliers(
            &Vector::zeros(0),
            &Vector::from_element(1, -1.0),
            &x,
            2.0,
            2.0,
            &prog
        )
        .is_err());
    }

    #[test]
    fn ergodic_weights() {
        let s = build_schedule(
            &params(PenaltySetting::Geometric, ErrorMode::Constant, 2),
            0.0,
        )
        .unwrap();
        let rec = |x: f64| OuterRecord {
            k: 0,
            beta: 0.0,
            rho: 0.0,
            eps_k: 0.0,
            inner_tol: 0.0,
            lipschitz: 0.0,
            inner_iters: 0,
            stop_metric: 0.0,
            verified: true,
            evals: CounterSnapshot::default(),
            x: vec![x],
            y: vec![],
            z: vec![],
            objective: 0.0,
            feasibility: 0.0,
            constraint_violation: 0.0,
            psi_sum: 0.0,
        };
        let trace = SolveTrace {
            x0: vec![0.0],
            y0: vec![],
            z0: vec![],
            records: vec![rec(1.0), rec(12.0)],
            totals: CounterSnapshot::default(),
            ergodic: vec![],
        };
        let avg = ergodic_average(&trace, &s).unwrap();
        assert!((avg[0] - (1.0 + 120.0) / 11.0).abs() < 1e-12);
        let empty = SolveTrace {
            records: vec![],
            ..trace
        };
        assert!(matches!(
            ergodic_average(&empty, &s),
            Err(IalmError::EmptyTrace)
        ));
    }

    #[test]
    fn unconstrained_strongly_convex_single_step() {
        let n = 3;
        let c = Vector::from_vec(vec![0.2, -0.1, 0.4]);
        let g = QuadraticFunction::new(Some(Matrix::identity(n, n) * 2.0), c.clone(), 0.0).unwrap();
        let consts = ProblemConstants {
            mu: 2.0,
            l0: 2.0,
            constraint_lipschitz: vec![],
            constraint_bounds: vec![],
            diameter: 2.0 * 3f64.sqrt(),
        };
        let prog = ConvexProgram::builder(
            Arc::new(g),
            Arc::new(BoxSet::symmetric(n, 1.0).unwrap()),
            consts,
        )
        .build()
        .unwrap();
        let s = build_schedule(
            &params(PenaltySetting::Constant, ErrorMode::Constant, 1),
            2.0,
        )
        .unwrap();
        let t = run(
            &prog,
            &s,
            &Vector::zeros(n),
            &Vector::zeros(0),
            &Vector::zeros(0),
            &DriverOptions::default(),
        )
        .unwrap();
        let x1 = t.last_x();
        assert!((x1 + c / 2.0).norm() < 1e-9);
        assert!(t.records[0].z.is_empty() && t.records[0].y.is_empty());
        assert!(t.all_verified());
    }
}
