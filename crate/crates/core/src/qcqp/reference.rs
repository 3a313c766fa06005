use serde::{Deserialize, Serialize};

use crate::certificates::{kkt_residual, KktResidual};
use crate::error::{IalmError, Result};
use crate::qcqp::instance::{qcqp_as_program, QcqpData, QcqpInstance};
use crate::{Matrix, Vector};

/// A certified primal-dual solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x: Vec<f64>,
    pub f0: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub kkt: KktResidual,
}

impl Reference {
    pub fn x(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }

    pub fn y(&self) -> Vector {
        Vector::from_column_slice(&self.y)
    }

    pub fn z(&self) -> Vector {
        Vector::from_column_slice(&self.z)
    }
}

const IPM_MAX_ITERS: usize = 300;
const IPM_TOL: f64 = 1e-12;

struct Inequalities<'a> {
    data: &'a QcqpData,
}

impl Inequalities<'_> {
    fn count(&self) -> usize {
        self.data.m() + 2 * self.data.n()
    }

    /// Slacks -c_i(x): quadratic constraints, then upper, then lower bounds.
    fn slacks(&self, x: &Vector) -> Vector {
        let (m, n) = (self.data.m(), self.data.n());
        let (l, u) = (self.data.bounds.lower(), self.data.bounds.upper());
        Vector::from_fn(m + 2 * n, |i, _| {
            if i < m {
                -self.data.constraint(i + 1, x)
            } else if i < m + n {
                u[i - m] - x[i - m]
            } else {
                x[i - m - n] - l[i - m - n]
            }
        })
    }
}

struct IpmPoint {
    x: Vector,
    lambda: Vector,
    nu: Vector,
}

fn dual_residual(
    data: &QcqpData,
    x: &Vector,
    lambda: &Vector,
    nu: &Vector,
    grads: &[Vector],
) -> Vector {
    let (m, n) = (data.m(), data.n());
    let mut r = data.gradient(0, x);
    for (j, g) in grads.iter().enumerate() {
        r.axpy(lambda[j], g, 1.0);
    }
    for i in 0..n {
        r[i] += lambda[m + i] - lambda[m + n + i];
    }
    if data.p() > 0 {
        r.gemv_tr(1.0, &data.a, nu, 1.0);
    }
    r
}

fn residual_norm(data: &QcqpData, ineq: &Inequalities, pt: &IpmPoint, t: f64) -> Option<f64> {
    let s = ineq.slacks(&pt.x);
    if s.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let grads: Vec<Vector> = (1..=data.m()).map(|j| data.gradient(j, &pt.x)).collect();
    let rd = dual_residual(data, &pt.x, &pt.lambda, &pt.nu, &grads);
    let rc: f64 = pt
        .lambda
        .iter()
        .zip(s.iter())
        .map(|(l, s)| (l * s - 1.0 / t).powi(2))
        .sum();
    let rp = if data.p() > 0 {
        (&data.a * &pt.x - &data.b).norm_squared()
    } else {
        0.0
    };
    Some((rd.norm_squared() + rc + rp).sqrt())
}

/// Primal-dual interior point method with the box as 2n linear inequalities.
fn interior_point(data: &QcqpData) -> Result<IpmPoint> {
    let (m, n, p) = (data.m(), data.n(), data.p());
    let ineq = Inequalities { data };
    let mi = ineq.count();
    let center = Vector::from_fn(n, |i, _| {
        0.5 * (data.bounds.lower()[i] + data.bounds.upper()[i])
    });
    let s0 = ineq.slacks(&center);
    if s0.iter().any(|v| *v <= 0.0) {
        return Err(IalmError::ReferenceNotCertified(
            "the box center is not strictly feasible for the inequalities".into(),
        ));
    }
    let mut pt = IpmPoint {
        x: center,
        lambda: s0.map(|s| 1.0 / s),
        nu: Vector::zeros(p),
    };
    for _ in 0..IPM_MAX_ITERS {
        let s = ineq.slacks(&pt.x);
        let gap = pt.lambda.dot(&s);
        let grads: Vec<Vector> = (1..=m).map(|j| data.gradient(j, &pt.x)).collect();
        let rd = dual_residual(data, &pt.x, &pt.lambda, &pt.nu, &grads);
        let rp = if p > 0 {
            &data.a * &pt.x - &data.b
        } else {
            Vector::zeros(0)
        };
        if gap <= IPM_TOL && rd.norm() <= IPM_TOL && rp.norm() <= IPM_TOL {
            break;
        }
        let t = 10.0 * mi as f64 / gap;

        let mut h = data.q[0].clone();
        let mut rhs = -data.gradient(0, &pt.x);
        for (j, g) in grads.iter().enumerate() {
            h += &data.q[j + 1] * pt.lambda[j];
            h.ger(pt.lambda[j] / s[j], g, g, 1.0);
            rhs.axpy(-1.0 / (t * s[j]), g, 1.0);
        }
        for i in 0..n {
            let (su, sl) = (s[m + i], s[m + n + i]);
            h[(i, i)] += pt.lambda[m + i] / su + pt.lambda[m + n + i] / sl;
            rhs[i] += -1.0 / (t * su) + 1.0 / (t * sl);
        }
        let mut kkt = Matrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        let mut full_rhs = Vector::zeros(n + p);
        full_rhs.rows_mut(0, n).copy_from(&rhs);
        if p > 0 {
            kkt.view_mut((0, n), (n, p)).copy_from(&data.a.transpose());
            kkt.view_mut((n, 0), (p, n)).copy_from(&data.a);
            full_rhs.rows_mut(n, p).copy_from(&(-&rp));
        }
        let sol = kkt
            .lu()
            .solve(&full_rhs)
            .ok_or_else(|| IalmError::ReferenceNotCertified("singular Newton system".into()))?;
        let dx = sol.rows(0, n).into_owned();
        let nu_new = sol.rows(n, p).into_owned();
        let dnu = &nu_new - &pt.nu;
        let dlambda = Vector::from_fn(mi, |i, _| {
            let dc = if i < m {
                grads[i].dot(&dx)
            } else if i < m + n {
                dx[i - m]
            } else {
                -dx[i - m - n]
            };
            -pt.lambda[i] + 1.0 / (t * s[i]) + pt.lambda[i] / s[i] * dc
        });

        let mut step: f64 = 1.0;
        for i in 0..mi {
            if dlambda[i] < 0.0 {
                step = step.min(-pt.lambda[i] / dlambda[i]);
            }
        }
        step *= 0.99;
        let base = residual_norm(data, &ineq, &pt, t).unwrap_or(f64::INFINITY);
        let mut accepted = None;
        for _ in 0..80 {
            let cand = IpmPoint {
                x: &pt.x + step * &dx,
                lambda: &pt.lambda + step * &dlambda,
                nu: &pt.nu + step * &dnu,
            };
            if let Some(r) = residual_norm(data, &ineq, &cand, t) {
                if r <= (1.0 - 0.01 * step) * base {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(c) => pt = c,
            None => break,
        }
    }
    Ok(pt)
}

#[derive(Debug, Clone)]
struct ActiveSet {
    quad: Vec<bool>,
    /// -1 at the lower bound, +1 at the upper bound, 0 free.
    bound: Vec<i8>,
}

struct Polished {
    x: Vector,
    z: Vector,
    nu: Vector,
}

/// Newton's method on the equality system defined by an active set.
fn newton_polish(
    data: &QcqpData,
    active: &ActiveSet,
    x0: &Vector,
    z0: &Vector,
    nu0: &Vector,
) -> Option<Polished> {
    let (m, n, p) = (data.m(), data.n(), data.p());
    let free: Vec<usize> = (0..n).filter(|i| active.bound[*i] == 0).collect();
    let act: Vec<usize> = (0..m).filter(|j| active.quad[*j]).collect();
    let (nf, na) = (free.len(), act.len());
    let mut x = x0.clone();
    for i in 0..n {
        match active.bound[i] {
            1 => x[i] = data.bounds.upper()[i],
            -1 => x[i] = data.bounds.lower()[i],
            _ => {}
        }
    }
    let mut z = Vector::zeros(m);
    for &j in &act {
        z[j] = z0[j];
    }
    let mut nu = nu0.clone();
    let dim = nf + na + p;
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let grads: Vec<Vector> = (1..=m).map(|j| data.gradient(j, &x)).collect();
        let mut gl = data.gradient(0, &x);
        for &j in &act {
            gl.axpy(z[j], &grads[j], 1.0);
        }
        if p > 0 {
            gl.gemv_tr(1.0, &data.a, &nu, 1.0);
        }
        let mut f = Vector::zeros(dim);
        for (r, &i) in free.iter().enumerate() {
            f[r] = gl[i];
        }
        for (r, &j) in act.iter().enumerate() {
            f[nf + r] = data.constraint(j + 1, &x);
        }
        if p > 0 {
            f.rows_mut(nf + na, p).copy_from(&(&data.a * &x - &data.b));
        }
        let norm = f.norm();
        if !norm.is_finite() {
            return None;
        }
        if norm <= 1e-15 || (norm >= 0.5 * best && norm < 1e-11) {
            break;
        }
        best = best.min(norm);
        if dim == 0 {
            break;
        }
        let mut hl = data.q[0].clone();
        for &j in &act {
            hl += &data.q[j + 1] * z[j];
        }
        let mut jac = Matrix::zeros(dim, dim);
        for (r, &i) in free.iter().enumerate() {
            for (c, &k) in free.iter().enumerate() {
                jac[(r, c)] = hl[(i, k)];
            }
            for (c, &j) in act.iter().enumerate() {
                jac[(r, nf + c)] = grads[j][i];
                jac[(nf + c, r)] = grads[j][i];
            }
            for e in 0..p {
                jac[(r, nf + na + e)] = data.a[(e, i)];
                jac[(nf + na + e, r)] = data.a[(e, i)];
            }
        }
        let step = jac.svd(true, true).solve(&(-f), 1e-13).ok()?;
        for (r, &i) in free.iter().enumerate() {
            x[i] += step[r];
        }
        for (r, &j) in act.iter().enumerate() {
            z[j] += step[nf + r];
        }
        for e in 0..p {
            nu[e] += step[nf + na + e];
        }
    }
    Some(Polished { x, z, nu })
}

/// Adjusts the active set; returns false when it is already consistent.
fn repair_active_set(data: &QcqpData, active: &mut ActiveSet, pol: &Polished) -> bool {
    let (m, n) = (data.m(), data.n());
    let tol = 1e-10;
    let mut changed = false;
    for j in 0..m {
        if active.quad[j] && pol.z[j] < -tol {
            active.quad[j] = false;
            changed = true;
        } else if !active.quad[j] && data.constraint(j + 1, &pol.x) > tol {
            active.quad[j] = true;
            changed = true;
        }
    }
    let mut gl = data.gradient(0, &pol.x);
    for j in 0..m {
        gl.axpy(pol.z[j], &data.gradient(j + 1, &pol.x), 1.0);
    }
    if data.p() > 0 {
        gl.gemv_tr(1.0, &data.a, &pol.nu, 1.0);
    }
    let (l, u) = (data.bounds.lower(), data.bounds.upper());
    for i in 0..n {
        match active.bound[i] {
            0 if pol.x[i] > u[i] => {
                active.bound[i] = 1;
                changed = true;
            }
            0 if pol.x[i] < l[i] => {
                active.bound[i] = -1;
                changed = true;
            }
            1 if gl[i] > tol => {
                active.bound[i] = 0;
                changed = true;
            }
            -1 if gl[i] < -tol => {
                active.bound[i] = 0;
                changed = true;
            }
            _ => {}
        }
    }
    changed
}

/// Solves the instance to KKT residuals at most `tol` or fails.
pub fn reference_solve(inst: &QcqpInstance, tol: f64) -> Result<Reference> {
    if !(tol > 0.0 && tol <= 1e-7) {
        return Err(IalmError::InvalidParameter(format!(
            "reference tolerance must lie in (0, 1e-7], got {tol}"
        )));
    }
    let data = inst.data()?;
    let prog = qcqp_as_program(inst)?;
    let (m, n) = (data.m(), data.n());
    let ipm = interior_point(&data)?;
    let s = Inequalities { data: &data }.slacks(&ipm.x);

    let mut candidates: Vec<(Vector, Vector, Vector)> = Vec::new();
    let mut active = ActiveSet {
        quad: (0..m).map(|j| ipm.lambda[j] > s[j]).collect(),
        bound: (0..n)
            .map(|i| {
                if ipm.lambda[m + i] > s[m + i] {
                    1
                } else if ipm.lambda[m + n + i] > s[m + n + i] {
                    -1
                } else {
                    0
                }
            })
            .collect(),
    };
    let z_ipm = ipm.lambda.rows(0, m).into_owned();
    let (mut xs, mut zs, mut nus) = (ipm.x.clone(), z_ipm.clone(), ipm.nu.clone());
    for _ in 0..20 {
        let Some(pol) = newton_polish(&data, &active, &xs, &zs, &nus) else {
            break;
        };
        let changed = repair_active_set(&data, &mut active, &pol);
        let clamped = data.bounds.project(&pol.x);
        let z = pol.z.map(|v| v.max(0.0));
        candidates.push((clamped, pol.nu.clone(), z));
        if !changed {
            break;
        }
        xs = pol.x;
        zs = pol.z.map(|v| v.max(0.0));
        nus = pol.nu;
    }
    candidates.push((data.bounds.project(&ipm.x), ipm.nu.clone(), z_ipm));

    let mut best: Option<(f64, Reference)> = None;
    for (x, y, z) in candidates {
        let kkt = kkt_residual(&prog, &x, &y, &z)?;
        let score = kkt.max();
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((
                score,
                Reference {
                    f0: data.objective(&x),
                    x: x.as_slice().to_vec(),
                    y: y.as_slice().to_vec(),
                    z: z.as_slice().to_vec(),
                    kkt,
                },
            ));
        }
    }
    let (score, reference) = best.expect("at least the interior point candidate");
    if score <= tol {
        Ok(reference)
    } else {
        Err(IalmError::ReferenceNotCertified(format!(
            "best KKT residual {score:.3e} exceeds {tol:.1e}"
        )))
    }
}
