//! The classical augmented Lagrangian and its smooth part.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, invalid, IalmError, Result};
use crate::problem::ConvexProgram;
use crate::{Matrix, Vector};

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "penalty beta must be positive, got {beta}"
        )))
    }
}

/// ψ_β(u, v).
pub fn psi(beta: f64, u: f64, v: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(psi_unchecked(beta, u, v))
}

#[inline]
pub(crate) fn psi_unchecked(beta: f64, u: f64, v: f64) -> f64 {
    if beta * u + v >= 0.0 {
        u * v + 0.5 * beta * u * u
    } else {
        -v * v / (2.0 * beta)
    }
}

/// ∂ψ_β/∂u = [βu + v]_+.
pub fn psi_partial_u(beta: f64, u: f64, v: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok((beta * u + v).max(0.0))
}

#[derive(Debug, Clone)]
pub struct AlEvaluation {
    pub value: f64,
    /// ∇_x F_β, present when requested.
    pub smooth_grad: Option<Vector>,
    pub per_constraint_psi: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl AlEvaluation {
    /// F_β = L_β - h.
    pub fn smooth_value(&self, h: f64) -> f64 {
        self.value - h
    }
}

fn check_multipliers(prog: &ConvexProgram, y: &Vector, z: &Vector) -> Result<()> {
    check_dim("equality multipliers", prog.p(), y.len())?;
    check_dim("inequality multipliers", prog.m(), z.len())
}

/// L_β(x, y, z) and optionally ∇_x F_β(x, y, z).
///
/// Costs one gradient evaluation when `want_grad` is set, one function
/// evaluation otherwise.
pub fn al_evaluate(
    prog: &ConvexProgram,
    beta: f64,
    x: &Vector,
    y: &Vector,
    z: &Vector,
    want_grad: bool,
) -> Result<AlEvaluation> {
    check_beta(beta)?;
    check_multipliers(prog, y, z)?;
    let r = prog.affine_residual(x)?;
    let h = prog.regularizer().value(x);

    let (objective, constraints, smooth_grad) = if want_grad {
        let pg = prog.eval_gradients(x)?;
        let mut grad = pg.objective_grad;
        if prog.p() > 0 {
            let w = y + beta * &r;
            grad.gemv_tr(1.0, prog.a(), &w, 1.0);
        }
        for ((fi, gi), zi) in pg
            .constraints
            .iter()
            .zip(&pg.constraint_grads)
            .zip(z.iter())
        {
            let weight = (beta * fi + zi).max(0.0);
            if weight > 0.0 {
                grad.axpy(weight, gi, 1.0);
            }
        }
        (pg.objective, pg.constraints, Some(grad))
    } else {
        let pv = prog.eval_values(x)?;
        (pv.objective, pv.constraints, None)
    };

    let per_constraint_psi: Vec<f64> = constraints
        .iter()
        .zip(z.iter())
        .map(|(fi, zi)| psi_unchecked(beta, *fi, *zi))
        .collect();
    let value = objective
        + h
        + y.dot(&r)
        + 0.5 * beta * r.norm_squared()
        + per_constraint_psi.iter().sum::<f64>();
    if let Some(g) = &smooth_grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(IalmError::NonFinite("augmented Lagrangian gradient"));
        }
    }
    Ok(AlEvaluation {
        value,
        smooth_grad,
        per_constraint_psi,
        objective,
        constraints,
    })
}

/// L(z) = L_0 + β‖AᵀA‖ + Σ (β B_i (B_i + L_i) + L_i |z_i|).
pub fn lipschitz_estimate(prog: &ConvexProgram, beta: f64, z: &Vector) -> Result<f64> {
    check_beta(beta)?;
    check_dim("inequality multipliers", prog.m(), z.len())?;
    let c = prog.constants();
    let mut l = c.l0 + beta * prog.ata_norm();
    for ((b, li), zi) in c
        .constraint_bounds
        .iter()
        .zip(&c.constraint_lipschitz)
        .zip(z.iter())
    {
        l += beta * b * (b + li) + li * zi.abs();
    }
    Ok(l)
}

const POWER_MAX_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-10;
const POWER_SEED: u64 = 0x5eed;

/// ‖AᵀA‖₂ by power iteration on AᵀA.
pub fn spectral_norm_ata(a: &Matrix) -> f64 {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();
    let mut av = Vector::zeros(a.nrows());
    let mut w = Vector::zeros(n);
    let mut rayleigh = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        a.mul_to(&v, &mut av);
        a.tr_mul_to(&av, &mut w);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v.copy_from(&w);
        v /= norm;
        if (next - rayleigh).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        rayleigh = next;
    }
    rayleigh
}
