//! Nesterov's optimal first-order method for φ + ψ.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, IalmError, Result};
use crate::Vector;

pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopRule {
    /// Stationarity measure of the new iterate at most `tol`.
    GradientMapNorm(f64),
    /// φ(x) + ψ(x) - reference at most `tol`.
    ObjectiveGap { reference: f64, tol: f64 },
    /// Run exactly `max_iters` iterations.
    IterCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApgConfig {
    pub lipschitz: f64,
    pub mu: f64,
    pub alpha0: f64,
    pub max_iters: usize,
    pub stop_rule: StopRule,
    pub record_history: bool,
}

impl ApgConfig {
    /// α_0 = 1 when μ = 0 and √(μ/L) otherwise.
    pub fn new(lipschitz: f64, mu: f64, stop_rule: StopRule) -> Result<Self> {
        let alpha0 = if mu > 0.0 {
            (mu / lipschitz).sqrt()
        } else {
            1.0
        };
        let cfg = Self {
            lipschitz,
            mu,
            alpha0,
            max_iters: DEFAULT_MAX_ITERS,
            stop_rule,
            record_history: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(invalid(format!(
                "L_phi must be positive, got {}",
                self.lipschitz
            )));
        }
        if !(self.mu >= 0.0 && self.mu <= self.lipschitz) {
            return Err(invalid(format!(
                "mu = {} must lie in [0, L_phi = {}]",
                self.mu, self.lipschitz
            )));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(invalid(format!("alpha0 = {} outside (0, 1]", self.alpha0)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        match self.stop_rule {
            StopRule::GradientMapNorm(tol) if !(tol >= 0.0) => {
                Err(invalid("gradient-map tolerance must be nonnegative"))
            }
            StopRule::ObjectiveGap { reference, tol } if !(reference.is_finite() && tol >= 0.0) => {
                Err(invalid(
                    "objective-gap rule needs a finite reference and tol >= 0",
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApgStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct ApgResult {
    pub x: Vector,
    pub iters_used: usize,
    pub final_stop_metric: f64,
    pub status: ApgStatus,
    /// φ(x^k) + ψ(x^k) for k = 1..=iters_used, when requested.
    pub history: Vec<f64>,
}

/// The smooth part φ and the prox-friendly part ψ of a composite problem.
pub trait Composite {
    /// Writes ∇φ(x) into `grad` and returns φ(x).
    fn smooth_grad(&self, x: &Vector, grad: &mut Vector) -> Result<f64>;

    fn smooth_value(&self, x: &Vector) -> Result<f64>;

    /// argmin ψ(u) + ‖u - point‖² / (2 step).
    fn prox(&self, point: &Vector, step: f64) -> Result<Vector>;

    fn nonsmooth_value(&self, _x: &Vector) -> f64 {
        0.0
    }

    /// dist(-grad, ∂ψ(x)) when it is available in closed form.
    fn stationarity(&self, _x: &Vector, _grad: &Vector) -> Option<f64> {
        None
    }
}

fn check_alpha(a: f64, name: &str) -> Result<()> {
    if a > 0.0 && a <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {a} outside (0, 1]")))
    }
}

/// α_{k+1} = (q - α_k² + √((q - α_k²)² + 4α_k²)) / 2.
pub fn alpha_next(alpha: f64, q: f64) -> Result<f64> {
    check_alpha(alpha, "alpha_k")?;
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q = {q} outside [0, 1]")));
    }
    let s = q - alpha * alpha;
    Ok(0.5 * (s + (s * s + 4.0 * alpha * alpha).sqrt()))
}

/// α_k (1 - α_k) / (α_k² + α_{k+1}).
pub fn momentum_weight(alpha: f64, alpha_next: f64) -> Result<f64> {
    check_alpha(alpha, "alpha_k")?;
    check_alpha(alpha_next, "alpha_k+1")?;
    Ok(alpha * (1.0 - alpha) / (alpha * alpha + alpha_next))
}

fn finite(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(IalmError::NonFinite(what))
    }
}

pub fn solve<P: Composite + ?Sized>(
    problem: &P,
    cfg: &ApgConfig,
    x0: &Vector,
) -> Result<ApgResult> {
    cfg.validate()?;
    finite(x0, "initial point")?;
    let l = cfg.lipschitz;
    let q = cfg.mu / l;
    let n = x0.len();

    let mut x = x0.clone();
    let mut x_hat = x0.clone();
    let mut alpha = cfg.alpha0;
    let mut grad_hat = Vector::zeros(n);
    problem.smooth_grad(&x_hat, &mut grad_hat)?;
    finite(&grad_hat, "gradient")?;

    if let StopRule::GradientMapNorm(tol) = cfg.stop_rule {
        if let Some(metric) = problem.stationarity(x0, &grad_hat) {
            if metric <= tol {
                return Ok(ApgResult {
                    x,
                    iters_used: 0,
                    final_stop_metric: metric,
                    status: ApgStatus::Converged,
                    history: Vec::new(),
                });
            }
        }
    }

    let mut history = Vec::new();
    let mut grad_new = Vector::zeros(n);
    let mut metric = f64::INFINITY;
    for k in 0..cfg.max_iters {
        let step_point = &x_hat - &grad_hat / l;
        let x_new = problem.prox(&step_point, 1.0 / l)?;
        finite(&x_new, "iterate")?;
        let alpha_new = alpha_next(alpha, q)?;
        let w = momentum_weight(alpha, alpha_new)?;

        let mut have_grad_new = false;
        let mut value_new = None;
        let stop = match cfg.stop_rule {
            StopRule::GradientMapNorm(tol) => {
                let phi = problem.smooth_grad(&x_new, &mut grad_new)?;
                finite(&grad_new, "gradient")?;
                have_grad_new = true;
                value_new = Some(phi + problem.nonsmooth_value(&x_new));
                metric = match problem.stationarity(&x_new, &grad_new) {
                    Some(s) => s,
                    None => (l * (&x_hat - &x_new) + &grad_new - &grad_hat).norm(),
                };
                metric <= tol
            }
            StopRule::ObjectiveGap { reference, tol } => {
                let v = problem.smooth_value(&x_new)? + problem.nonsmooth_value(&x_new);
                value_new = Some(v);
                metric = v - reference;
                metric <= tol
            }
            StopRule::IterCount => false,
        };
        if cfg.record_history {
            let v = match value_new {
                Some(v) => v,
                None => problem.smooth_value(&x_new)? + problem.nonsmooth_value(&x_new),
            };
            history.push(v);
        }
        if stop {
            return Ok(ApgResult {
                x: x_new,
                iters_used: k + 1,
                final_stop_metric: metric,
                status: ApgStatus::Converged,
                history,
            });
        }

        let x_hat_new = &x_new + w * (&x_new - &x);
        if w == 0.0 && have_grad_new {
            std::mem::swap(&mut grad_hat, &mut grad_new);
        } else if k + 1 < cfg.max_iters {
            problem.smooth_grad(&x_hat_new, &mut grad_hat)?;
            finite(&grad_hat, "gradient")?;
        }
        x = x_new;
        x_hat = x_hat_new;
        alpha = alpha_new;
    }

    let status = if cfg.stop_rule == StopRule::IterCount {
        ApgStatus::Converged
    } else {
        ApgStatus::BudgetExhausted
    };
    Ok(ApgResult {
        x,
        iters_used: cfg.max_iters,
        final_stop_metric: metric,
        status,
        history,
    })
}
