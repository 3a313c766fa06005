use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IalmError, Result};
use crate::problem::{BoxSet, ConvexProgram, ProblemConstants, QuadraticFunction, SmoothFunction};
use crate::{Matrix, Vector};

pub const GENERATOR: &str = "gaussian-gram-v1";
/// Target ratio ‖Q_0‖ / λ_min(Q_0) scale for strongly convex instances.
pub const CONDITION_TARGET: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    Convex,
    StronglyConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub seed: u64,
    pub convexity: Convexity,
    pub q0_scale: f64,
    pub generator: String,
    /// Variance of every Gaussian entry.
    pub variance: f64,
    /// Number of zero eigenvalues planted in Q_0.
    pub rank_deficiency: usize,
    /// Identity shift added to Q_0 before scaling.
    pub shift: f64,
}

/// min ½xᵀQ_0x + c_0ᵀx s.t. ½xᵀQ_jx + c_jᵀx + d_j <= 0, Ax = b, l <= x <= u.
///
/// Matrices are stored as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpInstance {
    pub n: usize,
    pub m: usize,
    pub q: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub eq_a: Vec<Vec<f64>>,
    #[serde(default)]
    pub eq_b: Vec<f64>,
    pub meta: InstanceMeta,
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Matrix {
    Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gram(m: &Matrix, n: usize) -> Matrix {
    let g = m.tr_mul(m) / n as f64;
    (&g + g.transpose()) * 0.5
}

pub fn generate_instance(
    seed: u64,
    n: usize,
    m: usize,
    convexity: Convexity,
    q0_scale: f64,
) -> Result<QcqpInstance> {
    if n == 0 {
        return Err(IalmError::InvalidParameter("n must be at least 1".into()));
    }
    if !(q0_scale > 0.0 && q0_scale.is_finite()) {
        return Err(IalmError::InvalidParameter(
            "q0_scale must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deficiency = match convexity {
        Convexity::Convex => n.div_ceil(4),
        Convexity::StronglyConvex => 0,
    };
    let m0 = gaussian_matrix(&mut rng, n - deficiency, n);
    let mut q0 = gram(&m0, n);
    let shift = match convexity {
        Convexity::Convex => 0.0,
        Convexity::StronglyConvex => {
            // λ_min >= r ‖Q_0‖ after the shift, r = 0.1 / κ
            let top = q0.symmetric_eigenvalues().max();
            let r = 0.1 / CONDITION_TARGET;
            r * top / (1.0 - r)
        }
    };
    for i in 0..n {
        q0[(i, i)] += shift;
    }
    q0 *= q0_scale;
    let c0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut q = vec![to_rows(&q0)];
    let mut c = vec![c0];
    let mut d = Vec::with_capacity(m);
    for _ in 0..m {
        let mj = gaussian_matrix(&mut rng, n, n);
        q.push(to_rows(&gram(&mj, n)));
        c.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
        let g: f64 = StandardNormal.sample(&mut rng);
        d.push(-g.abs() - 0.1);
    }
    Ok(QcqpInstance {
        n,
        m,
        q,
        c,
        d,
        lower: vec![-1.0; n],
        upper: vec![1.0; n],
        eq_a: Vec::new(),
        eq_b: Vec::new(),
        meta: InstanceMeta {
            seed,
            convexity,
            q0_scale,
            generator: GENERATOR.to_string(),
            variance: 1.0,
            rank_deficiency: deficiency,
            shift,
        },
    })
}

/// Dense data of a validated instance.
#[derive(Debug, Clone)]
pub struct QcqpData {
    pub q: Vec<Matrix>,
    pub c: Vec<Vector>,
    pub d: Vec<f64>,
    pub bounds: BoxSet,
    pub a: Matrix,
    pub b: Vector,
}

impl QcqpData {
    pub fn n(&self) -> usize {
        self.c[0].len()
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn p(&self) -> usize {
        self.b.len()
    }

    /// f_0(x).
    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q[0] * x)) + self.c[0].dot(x)
    }

    /// f_j(x), j >= 1.
    pub fn constraint(&self, j: usize, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q[j] * x)) + self.c[j].dot(x) + self.d[j - 1]
    }

    pub fn gradient(&self, j: usize, x: &Vector) -> Vector {
        &self.q[j] * x + &self.c[j]
    }
}

fn bad(msg: impl Into<String>) -> IalmError {
    IalmError::InvalidInstance(msg.into())
}

impl QcqpInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let inst: QcqpInstance = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        inst.data()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn p(&self) -> usize {
        self.eq_b.len()
    }

    /// Checks shapes, symmetry, semidefiniteness, d_j < 0 and l < u.
    pub fn data(&self) -> Result<QcqpData> {
        let n = self.n;
        if n == 0 {
            return Err(bad("n must be at least 1"));
        }
        if self.q.len() != self.m + 1 || self.c.len() != self.m + 1 || self.d.len() != self.m {
            return Err(bad("expected m + 1 matrices and vectors and m constants"));
        }
        let mut qs = Vec::with_capacity(self.m + 1);
        for (j, rows) in self.q.iter().enumerate() {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(bad(format!("Q_{j} is not {n}x{n}")));
            }
            let q = from_rows(rows, n);
            if q.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("Q_{j} has non-finite entries")));
            }
            let asym = (&q - q.transpose()).amax();
            if asym > 1e-12 * (1.0 + q.amax()) {
                return Err(bad(format!("Q_{j} is not symmetric")));
            }
            if q.clone().symmetric_eigenvalues().min() < -1e-10 * (1.0 + q.amax()) {
                return Err(bad(format!("Q_{j} is not positive semidefinite")));
            }
            qs.push(q);
        }
        let mut cs = Vec::with_capacity(self.m + 1);
        for (j, c) in self.c.iter().enumerate() {
            if c.len() != n || c.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("c_{j} must have {n} finite entries")));
            }
            cs.push(Vector::from_column_slice(c));
        }
        if self.d.iter().any(|d| !(*d < 0.0)) {
            return Err(bad("every d_j must be negative"));
        }
        let bounds =
            BoxSet::new(self.lower.clone(), self.upper.clone()).map_err(|e| bad(e.to_string()))?;
        if bounds.len() != n {
            return Err(bad("box dimension differs from n"));
        }
        if self.eq_a.len() != self.eq_b.len() || self.eq_a.iter().any(|r| r.len() != n) {
            return Err(bad("equality block has inconsistent shape"));
        }
        let a = from_rows(&self.eq_a, n);
        let b = Vector::from_column_slice(&self.eq_b);
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(bad("equality block has non-finite entries"));
        }
        Ok(QcqpData {
            q: qs,
            c: cs,
            d: self.d.clone(),
            bounds,
            a,
            b,
        })
    }
}

/// The instance as a convex program with analytic constants over the box.
pub fn qcqp_as_program(inst: &QcqpInstance) -> Result<ConvexProgram> {
    let data = inst.data()?;
    let n = data.n();
    let r = data
        .bounds
        .lower()
        .iter()
        .chain(data.bounds.upper())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        * (n as f64).sqrt();
    let spectral = |q: &Matrix| q.clone().symmetric_eigenvalues().max().max(0.0);

    let l0 = spectral(&data.q[0]);
    let mu = match inst.meta.convexity {
        Convexity::Convex => 0.0,
        Convexity::StronglyConvex => data.q[0].clone().symmetric_eigenvalues().min().max(0.0),
    };
    let mut lips = Vec::with_capacity(data.m());
    let mut bounds = Vec::with_capacity(data.m());
    let mut constraints: Vec<Arc<dyn SmoothFunction>> = Vec::with_capacity(data.m());
    for j in 1..=data.m() {
        let lj = spectral(&data.q[j]);
        let cn = data.c[j].norm();
        let value_bound = 0.5 * lj * r * r + cn * r + data.d[j - 1].abs();
        lips.push(lj);
        bounds.push(value_bound.max(lj * r + cn));
        constraints.push(Arc::new(QuadraticFunction::new(
            Some(data.q[j].clone()),
            data.c[j].clone(),
            data.d[j - 1],
        )?));
    }
    let consts = ProblemConstants {
        mu,
        l0,
        constraint_lipschitz: lips,
        constraint_bounds: bounds,
        diameter: data.bounds.diameter(),
    };
    let objective = QuadraticFunction::new(Some(data.q[0].clone()), data.c[0].clone(), 0.0)?;
    let mut builder =
        ConvexProgram::builder(Arc::new(objective), Arc::new(data.bounds.clone()), consts)
            .constraints(constraints);
    if data.p() > 0 {
        builder = builder.affine(data.a.clone(), data.b.clone());
    }
    builder.build()
}

/// Replaces every row aᵀx = b by the pair ±(aᵀx - b) <= 0.
pub fn transform_equalities_to_inequalities(prog: &ConvexProgram) -> Result<ConvexProgram> {
    if prog.p() == 0 {
        return Err(IalmError::InvalidParameter(
            "program has no equality block".into(),
        ));
    }
    let bx = prog.regularizer().as_box().ok_or_else(|| {
        IalmError::Unsupported("equality splitting needs a box to bound the new constraints".into())
    })?;
    let mut consts = prog.constants().clone();
    let mut constraints: Vec<Arc<dyn SmoothFunction>> = prog.constraint_fns().to_vec();
    for i in 0..prog.p() {
        let a: Vector = prog.a().row(i).transpose();
        let b = prog.b()[i];
        let (mut lo, mut hi) = (-b, -b);
        for (j, aj) in a.iter().enumerate() {
            let (l, u) = (bx.lower()[j], bx.upper()[j]);
            lo += (aj * l).min(aj * u);
            hi += (aj * l).max(aj * u);
        }
        let bound = lo.abs().max(hi.abs()).max(a.norm());
        for sign in [1.0, -1.0] {
            constraints.push(Arc::new(QuadraticFunction::affine(sign * &a, -sign * b)));
            consts.constraint_lipschitz.push(0.0);
            consts.constraint_bounds.push(bound);
        }
    }
    ConvexProgram::builder(prog.objective_fn().clone(), Arc::new(bx.clone()), consts)
        .constraints(constraints)
        .build()
}

/// dist(-grad, N_X(x)) <= eps_k / D for a box X.
pub fn inner_termination(
    grad: &Vector,
    x_new: &Vector,
    bounds: &BoxSet,
    eps_k: f64,
    diameter: f64,
) -> Result<bool> {
    crate::error::check_dim("gradient", x_new.len(), grad.len())?;
    crate::error::check_dim("point", bounds.len(), x_new.len())?;
    use crate::problem::ProxTerm;
    if !bounds.contains(x_new) {
        return Err(IalmError::InvalidParameter(
            "point lies outside the box".into(),
        ));
    }
    Ok(bounds.stationarity_residual(x_new, grad).norm() <= eps_k / diameter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(7, 12, 3, Convexity::Convex, 1.0).unwrap();
        let b = generate_instance(7, 12, 3, Convexity::Convex, 1.0).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_instance(8, 12, 3, Convexity::Convex, 1.0).unwrap();
        assert_ne!(a.q, c.q);
    }

    #[test]
    fn convex_instances_are_singular() {
        let inst = generate_instance(1, 12, 2, Convexity::Convex, 1.0).unwrap();
        let data = inst.data().unwrap();
        let ev = data.q[0].clone().symmetric_eigenvalues();
        assert!(ev.min() <= 1e-10);
        assert!(data.d.iter().all(|d| *d < 0.0));
        let x0 = Vector::zeros(12);
        for j in 1..=2 {
            assert_eq!(data.constraint(j, &x0), data.d[j - 1]);
        }
    }

    #[test]
    fn strongly_convex_has_margin() {
        let inst = generate_instance(1, 12, 2, Convexity::StronglyConvex, 1.0).unwrap();
        let ev = inst.data().unwrap().q[0].clone().symmetric_eigenvalues();
        assert!(ev.min() >= 0.1 * ev.max() / CONDITION_TARGET * 0.9);
        let prog = qcqp_as_program(&inst).unwrap();
        assert!(prog.constants().mu > 0.0);
    }

    #[test]
    fn scaled_instance_shares_data() {
        let a = generate_instance(3, 8, 2, Convexity::Convex, 1.0).unwrap();
        let b = generate_instance(3, 8, 2, Convexity::Convex, 100.0).unwrap();
        assert_eq!(a.c, b.c);
        assert_eq!(a.q[1], b.q[1]);
        assert!((b.q[0][0][0] - 100.0 * a.q[0][0][0]).abs() <= 1e-12 * b.q[0][0][0].abs());
    }

    #[test]
    fn rejects_corrupt_json() {
        assert!(QcqpInstance::from_json("{").is_err());
        let mut inst = generate_instance(3, 4, 1, Convexity::Convex, 1.0).unwrap();
        inst.d[0] = 1.0;
        assert!(QcqpInstance::from_json(&inst.to_json()).is_err());
    }

    #[test]
    fn split_single_equality() {
        let mut inst = generate_instance(3, 2, 0, Convexity::StronglyConvex, 1.0).unwrap();
        inst.eq_a = vec![vec![1.0, 0.0]];
        inst.eq_b = vec![0.0];
        let prog = qcqp_as_program(&inst).unwrap();
        let split = transform_equalities_to_inequalities(&prog).unwrap();
        assert_eq!((split.m(), split.p()), (2, 0));
        assert_eq!(split.constants().constraint_bounds, vec![1.0, 1.0]);
        let x = Vector::from_vec(vec![0.4, -0.2]);
        let vals = split.inspect(&x).unwrap();
        assert_eq!(vals.constraints, vec![0.4, -0.4]);
    }

    #[test]
    fn clamp_and_termination() {
        let b = BoxSet::symmetric(2, 1.0).unwrap();
        assert_eq!(
            b.project(&Vector::from_vec(vec![2.0, -3.0])),
            Vector::from_vec(vec![1.0, -1.0])
        );
        let x = Vector::from_vec(vec![0.0, 0.5]);
        assert!(inner_termination(&Vector::zeros(2), &x, &b, 1e-12, 1.0).unwrap());
        assert!(inner_termination(
            &Vector::zeros(2),
            &Vector::from_vec(vec![2.0, 0.0]),
            &b,
            1.0,
            1.0
        )
        .is_err());
    }
}
