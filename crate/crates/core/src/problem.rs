//! Convex programs as bundles of oracles with evaluation counters.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, IalmError, Result};
use crate::{Matrix, Vector};

/// A differentiable function on R^n.
pub trait SmoothFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &Vector) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, x: &Vector, grad: &mut Vector) -> f64;
}

/// The nonsmooth part `h + ι_X`.
pub trait ProxTerm: Send + Sync {
    fn dim(&self) -> usize;

    /// argmin over X of h(x) + ‖x - point‖² / (2 step).
    fn prox(&self, point: &Vector, step: f64) -> Vector;

    /// h(x) for x in X, +inf outside.
    fn value(&self, x: &Vector) -> f64;

    fn contains(&self, x: &Vector) -> bool;

    /// dist(-grad, ∂h(x) + N_X(x)), when it can be computed exactly.
    fn stationarity(&self, _x: &Vector, _grad: &Vector) -> Option<f64> {
        None
    }

    /// Draws a point of X, used by the sampling validator.
    fn sample(&self, _rng: &mut dyn RngCore) -> Option<Vector> {
        None
    }

    fn as_box(&self) -> Option<&BoxSet> {
        None
    }
}

/// The box [l, u] with h = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) {
                return Err(IalmError::NonFinite("box bounds"));
            }
            if l >= u {
                return Err(invalid(format!("box coordinate {i} has l >= u")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(n: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; n], vec![radius; n])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// ‖u - l‖.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn project(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    /// Componentwise residual of dist(-grad, N_X(x)).
    ///
    /// At an upper bound the normal cone is the ray +e_i, so a negative
    /// gradient component is absorbed; at a lower bound a positive one is.
    pub fn stationarity_residual(&self, x: &Vector, grad: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            (0..x.len()).map(|i| {
                let g = grad[i];
                let at_lower = x[i] <= self.lower[i];
                let at_upper = x[i] >= self.upper[i];
                match (at_lower, at_upper) {
                    (true, true) => 0.0,
                    (false, true) => g.max(0.0),
                    (true, false) => g.min(0.0),
                    (false, false) => g,
                }
            }),
        )
    }
}

impl ProxTerm for BoxSet {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn prox(&self, point: &Vector, _step: f64) -> Vector {
        self.project(point)
    }

    fn value(&self, x: &Vector) -> f64 {
        if self.contains(x) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn contains(&self, x: &Vector) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    fn stationarity(&self, x: &Vector, grad: &Vector) -> Option<f64> {
        Some(self.stationarity_residual(x, grad).norm())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Option<Vector> {
        Some(Vector::from_iterator(
            self.lower.len(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| rng.random_range(*l..=*u)),
        ))
    }

    fn as_box(&self) -> Option<&BoxSet> {
        Some(self)
    }
}

/// ½ xᵀQx + cᵀx + d. A missing Q means the function is affine.
#[derive(Debug, Clone)]
pub struct QuadraticFunction {
    q: Option<Matrix>,
    c: Vector,
    d: f64,
}

impl QuadraticFunction {
    pub fn new(q: Option<Matrix>, c: Vector, d: f64) -> Result<Self> {
        if let Some(q) = &q {
            check_dim("quadratic rows", c.len(), q.nrows())?;
            check_dim("quadratic cols", c.len(), q.ncols())?;
        }
        Ok(Self { q, c, d })
    }

    pub fn affine(c: Vector, d: f64) -> Self {
        Self { q: None, c, d }
    }

    pub fn hessian(&self) -> Option<&Matrix> {
        self.q.as_ref()
    }

    pub fn linear(&self) -> &Vector {
        &self.c
    }

    pub fn constant(&self) -> f64 {
        self.d
    }
}

impl SmoothFunction for QuadraticFunction {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        let quad = match &self.q {
            Some(q) => 0.5 * x.dot(&(q * x)),
            None => 0.0,
        };
        quad + self.c.dot(x) + self.d
    }

    fn value_grad(&self, x: &Vector, grad: &mut Vector) -> f64 {
        match &self.q {
            Some(q) => {
                q.mul_to(x, grad);
                let quad = 0.5 * x.dot(grad);
                *grad += &self.c;
                quad + self.c.dot(x) + self.d
            }
            None => {
                grad.copy_from(&self.c);
                self.c.dot(x) + self.d
            }
        }
    }
}

/// Constants assumed known by the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub l0: f64,
    pub constraint_lipschitz: Vec<f64>,
    pub constraint_bounds: Vec<f64>,
    pub diameter: f64,
}

impl ProblemConstants {
    fn validate(&self, m: usize) -> Result<()> {
        check_dim(
            "constraint Lipschitz constants",
            m,
            self.constraint_lipschitz.len(),
        )?;
        check_dim("constraint bounds", m, self.constraint_bounds.len())?;
        let all = [self.mu, self.l0, self.diameter]
            .into_iter()
            .chain(self.constraint_lipschitz.iter().copied())
            .chain(self.constraint_bounds.iter().copied());
        for v in all {
            if !v.is_finite() {
                return Err(IalmError::NonFinite("problem constants"));
            }
            if v < 0.0 {
                return Err(invalid("problem constants must be nonnegative"));
            }
        }
        if self.mu > self.l0 {
            return Err(invalid(format!(
                "mu = {} exceeds L0 = {}",
                self.mu, self.l0
            )));
        }
        if self.diameter <= 0.0 {
            return Err(invalid("diameter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct EvalCounters {
    grad: AtomicU64,
    fun: AtomicU64,
    prox: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub grad_evals: u64,
    pub fun_evals: u64,
    pub prox_evals: u64,
}

impl std::ops::Sub for CounterSnapshot {
    type Output = CounterSnapshot;

    fn sub(self, rhs: Self) -> Self {
        CounterSnapshot {
            grad_evals: self.grad_evals - rhs.grad_evals,
            fun_evals: self.fun_evals - rhs.fun_evals,
            prox_evals: self.prox_evals - rhs.prox_evals,
        }
    }
}

impl std::ops::Add for CounterSnapshot {
    type Output = CounterSnapshot;

    fn add(self, rhs: Self) -> Self {
        CounterSnapshot {
            grad_evals: self.grad_evals + rhs.grad_evals,
            fun_evals: self.fun_evals + rhs.fun_evals,
            prox_evals: self.prox_evals + rhs.prox_evals,
        }
    }
}

impl EvalCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            grad_evals: self.grad.load(Ordering::Relaxed),
            fun_evals: self.fun.load(Ordering::Relaxed),
            prox_evals: self.prox.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.grad.store(0, Ordering::Relaxed);
        self.fun.store(0, Ordering::Relaxed);
        self.prox.store(0, Ordering::Relaxed);
    }
}

/// Values of g and every f_i at one point.
#[derive(Debug, Clone)]
pub struct PointValues {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

/// Values and gradients of g and every f_i at one point.
#[derive(Debug, Clone)]
pub struct PointGradients {
    pub objective: f64,
    pub objective_grad: Vector,
    pub constraints: Vec<f64>,
    pub constraint_grads: Vec<Vector>,
}

/// min g(x) + h(x) over X subject to Ax = b and f_i(x) <= 0.
pub struct ConvexProgram {
    objective: Arc<dyn SmoothFunction>,
    constraints: Vec<Arc<dyn SmoothFunction>>,
    regularizer: Arc<dyn ProxTerm>,
    a: Matrix,
    b: Vector,
    constants: ProblemConstants,
    ata_norm: f64,
    counters: EvalCounters,
}

impl std::fmt::Debug for ConvexProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexProgram")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("p", &self.p())
            .field("constants", &self.constants)
            .finish()
    }
}

pub struct ProgramBuilder {
    objective: Arc<dyn SmoothFunction>,
    regularizer: Arc<dyn ProxTerm>,
    constraints: Vec<Arc<dyn SmoothFunction>>,
    affine: Option<(Matrix, Vector)>,
    constants: ProblemConstants,
}

impl ProgramBuilder {
    pub fn constraint(mut self, f: Arc<dyn SmoothFunction>) -> Self {
        self.constraints.push(f);
        self
    }

    pub fn constraints(mut self, fs: impl IntoIterator<Item = Arc<dyn SmoothFunction>>) -> Self {
        self.constraints.extend(fs);
        self
    }

    pub fn affine(mut self, a: Matrix, b: Vector) -> Self {
        self.affine = Some((a, b));
        self
    }

    pub fn build(self) -> Result<ConvexProgram> {
        let n = self.objective.dim();
        check_dim("regularizer", n, self.regularizer.dim())?;
        for f in &self.constraints {
            check_dim("constraint", n, f.dim())?;
        }
        self.constants.validate(self.constraints.len())?;
        let (a, b) = self
            .affine
            .unwrap_or_else(|| (Matrix::zeros(0, n), Vector::zeros(0)));
        check_dim("affine columns", n, a.ncols())?;
        check_dim("affine rows", a.nrows(), b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(IalmError::NonFinite("affine data"));
        }
        let ata_norm = crate::augmented::spectral_norm_ata(&a);
        Ok(ConvexProgram {
            objective: self.objective,
            constraints: self.constraints,
            regularizer: self.regularizer,
            a,
            b,
            constants: self.constants,
            ata_norm,
            counters: EvalCounters::default(),
        })
    }
}

impl ConvexProgram {
    pub fn builder(
        objective: Arc<dyn SmoothFunction>,
        regularizer: Arc<dyn ProxTerm>,
        constants: ProblemConstants,
    ) -> ProgramBuilder {
        ProgramBuilder {
            objective,
            regularizer,
            constraints: Vec::new(),
            affine: None,
            constants,
        }
    }

    pub fn n(&self) -> usize {
        self.objective.dim()
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    /// ‖AᵀA‖, computed once at construction.
    pub fn ata_norm(&self) -> f64 {
        self.ata_norm
    }

    pub fn regularizer(&self) -> &dyn ProxTerm {
        self.regularizer.as_ref()
    }

    pub fn objective_fn(&self) -> &Arc<dyn SmoothFunction> {
        &self.objective
    }

    pub fn constraint_fns(&self) -> &[Arc<dyn SmoothFunction>] {
        &self.constraints
    }

    pub fn counters(&self) -> &EvalCounters {
        &self.counters
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        check_dim("point", self.n(), x.len())
    }

    /// One counted function evaluation.
    pub fn eval_values(&self, x: &Vector) -> Result<PointValues> {
        self.check_point(x)?;
        self.counters.fun.fetch_add(1, Ordering::Relaxed);
        Ok(self.values_uncounted(x))
    }

    /// One counted gradient evaluation; the values come with it.
    pub fn eval_gradients(&self, x: &Vector) -> Result<PointGradients> {
        self.check_point(x)?;
        self.counters.grad.fetch_add(1, Ordering::Relaxed);
        let n = self.n();
        let mut objective_grad = Vector::zeros(n);
        let objective = self.objective.value_grad(x, &mut objective_grad);
        let mut constraints = Vec::with_capacity(self.m());
        let mut constraint_grads = Vec::with_capacity(self.m());
        for f in &self.constraints {
            let mut g = Vector::zeros(n);
            constraints.push(f.value_grad(x, &mut g));
            constraint_grads.push(g);
        }
        Ok(PointGradients {
            objective,
            objective_grad,
            constraints,
            constraint_grads,
        })
    }

    /// Evaluates without touching the counters; for reporting only.
    pub fn inspect(&self, x: &Vector) -> Result<PointValues> {
        self.check_point(x)?;
        Ok(self.values_uncounted(x))
    }

    fn values_uncounted(&self, x: &Vector) -> PointValues {
        PointValues {
            objective: self.objective.value(x),
            constraints: self.constraints.iter().map(|f| f.value(x)).collect(),
        }
    }

    pub fn prox(&self, point: &Vector, step: f64) -> Result<Vector> {
        self.check_point(point)?;
        self.counters.prox.fetch_add(1, Ordering::Relaxed);
        Ok(self.regularizer.prox(point, step))
    }

    /// Ax - b.
    pub fn affine_residual(&self, x: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        Ok(&self.a * x - &self.b)
    }
}

/// ‖Ax - b‖ + ‖[f(x)]_+‖.
pub fn feasibility_violation(prog: &ConvexProgram, x: &Vector) -> Result<f64> {
    let r = prog.affine_residual(x)?;
    let vals = prog.inspect(x)?;
    Ok(r.norm() + positive_part_norm(&vals.constraints))
}

pub fn positive_part_norm(values: &[f64]) -> f64 {
    values
        .iter()
        .map(|v| v.max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub objective_ratio: f64,
    pub constraint_ratios: Vec<f64>,
    pub constraint_max_abs: Vec<f64>,
    pub constraint_max_grad: Vec<f64>,
    pub violations: Vec<String>,
}

impl LipschitzReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn exceeds(observed: f64, declared: f64) -> bool {
    observed > declared * (1.0 + 1e-9) + 1e-12
}

/// Samples pairs of points in X and compares observed gradient ratios
/// and constraint magnitudes with the declared constants.
pub fn check_lipschitz_by_sampling(
    prog: &ConvexProgram,
    seed: u64,
    num_pairs: usize,
) -> Result<LipschitzReport> {
    if num_pairs == 0 {
        return Err(invalid("num_pairs must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prog.n();
    let m = prog.m();
    let mut report = LipschitzReport {
        pairs: num_pairs,
        objective_ratio: 0.0,
        constraint_ratios: vec![0.0; m],
        constraint_max_abs: vec![0.0; m],
        constraint_max_grad: vec![0.0; m],
        violations: Vec::new(),
    };
    let mut gx = Vector::zeros(n);
    let mut gy = Vector::zeros(n);
    for _ in 0..num_pairs {
        let (x, y) = match (
            prog.regularizer.sample(&mut rng),
            prog.regularizer.sample(&mut rng),
        ) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(IalmError::Unsupported(
                    "the feasible set does not support sampling".into(),
                ))
            }
        };
        let dist = (&x - &y).norm();
        if dist == 0.0 {
            continue;
        }
        prog.objective.value_grad(&x, &mut gx);
        prog.objective.value_grad(&y, &mut gy);
        report.objective_ratio = report.objective_ratio.max((&gx - &gy).norm() / dist);
        for (i, f) in prog.constraints.iter().enumerate() {
            let fx = f.value_grad(&x, &mut gx);
            let fy = f.value_grad(&y, &mut gy);
            report.constraint_ratios[i] =
                report.constraint_ratios[i].max((&gx - &gy).norm() / dist);
            report.constraint_max_abs[i] = report.constraint_max_abs[i].max(fx.abs()).max(fy.abs());
            report.constraint_max_grad[i] =
                report.constraint_max_grad[i].max(gx.norm()).max(gy.norm());
        }
    }
    let c = &prog.constants;
    if exceeds(report.objective_ratio, c.l0) {
        report.violations.push(format!(
            "objective gradient ratio {:.6e} exceeds L0 = {:.6e}",
            report.objective_ratio, c.l0
        ));
    }
    for i in 0..m {
        if exceeds(report.constraint_ratios[i], c.constraint_lipschitz[i]) {
            report.violations.push(format!(
                "constraint {i} gradient ratio {:.6e} exceeds L_{i} = {:.6e}",
                report.constraint_ratios[i], c.constraint_lipschitz[i]
            ));
        }
        let mag = report.constraint_max_abs[i].max(report.constraint_max_grad[i]);
        if exceeds(mag, c.constraint_bounds[i]) {
            report.violations.push(format!(
                "constraint {i} magnitude {:.6e} exceeds B_{i} = {:.6e}",
                mag, c.constraint_bounds[i]
            ));
        }
    }
    Ok(report)
}
