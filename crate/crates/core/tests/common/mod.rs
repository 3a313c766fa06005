#![allow(dead_code)]

use ialm::qcqp::QcqpData;
use ialm::{Matrix, Vector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Central differences with step 1e-6 (1 + ‖x‖).
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector) -> Vector {
    let h = 1e-6 * (1.0 + x.norm());
    Vector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// U diag(eigs) Uᵀ for a random orthogonal U.
pub fn with_spectrum<R: Rng>(rng: &mut R, eigs: &[f64]) -> Matrix {
    let u = random_orthogonal(rng, eigs.len());
    let d = Matrix::from_diagonal(&Vector::from_column_slice(eigs));
    let q = &u * d * u.transpose();
    (&q + q.transpose()) * 0.5
}

/// dist(-g, N_X(x)) for a box, by projecting onto each coordinate's cone.
pub fn box_normal_cone_distance(grad: &Vector, x: &Vector, lower: &[f64], upper: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let target = -grad[i];
        let proj = if x[i] >= upper[i] {
            target.max(0.0)
        } else if x[i] <= lower[i] {
            target.min(0.0)
        } else {
            0.0
        };
        s += (target - proj).powi(2);
    }
    s.sqrt()
}

fn feasible(data: &QcqpData, x: &Vector) -> bool {
    (1..=data.m()).all(|j| data.constraint(j, x) <= 0.0)
}

fn grid_points(
    center: &[f64],
    half_width: f64,
    steps: usize,
    lower: &[f64],
    upper: &[f64],
) -> Vec<Vec<f64>> {
    let n = center.len();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lo = (center[i] - half_width).max(lower[i]);
            let hi = (center[i] + half_width).min(upper[i]);
            (0..=steps)
                .map(|t| lo + (hi - lo) * t as f64 / steps as f64)
                .collect()
        })
        .collect();
    let mut pts = vec![Vec::with_capacity(n)];
    for axis in &axes {
        let mut next = Vec::with_capacity(pts.len() * axis.len());
        for p in &pts {
            for v in axis {
                let mut q = p.clone();
                q.push(*v);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Dense grid search over the box followed by shrinking local grids.
/// `f` returns None at infeasible points.
pub fn grid_minimize(
    f: impl Fn(&Vector) -> Option<f64>,
    lower: &[f64],
    upper: &[f64],
    step: f64,
) -> (Vector, f64) {
    let width = upper
        .iter()
        .zip(lower)
        .map(|(u, l)| u - l)
        .fold(0.0f64, f64::max);
    let steps = (width / step).round() as usize;
    let center: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let mut best: Option<(Vector, f64)> = None;
    let consider = |pts: Vec<Vec<f64>>, best: &mut Option<(Vector, f64)>| {
        for p in pts {
            let x = Vector::from_vec(p);
            if let Some(v) = f(&x) {
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    *best = Some((x, v));
                }
            }
        }
    };
    consider(grid_points(&center, width, steps, lower, upper), &mut best);
    // the window shrinks only once the best point stops moving
    let mut h = step;
    for _ in 0..400 {
        if h < 1e-12 * step {
            break;
        }
        let c = best.as_ref().expect("a feasible grid point").0.clone();
        consider(
            grid_points(c.as_slice(), 2.0 * h, 20, lower, upper),
            &mut best,
        );
        let moved = (&best.as_ref().unwrap().0 - &c).amax();
        if moved < h {
            h /= 4.0;
        }
    }
    best.expect("a feasible grid point")
}

/// Grid-search optimum of a QCQP without equality rows.
pub fn grid_search(data: &QcqpData, step: f64) -> (Vector, f64) {
    grid_minimize(
        |x| feasible(data, x).then(|| data.objective(x)),
        data.bounds.lower(),
        data.bounds.upper(),
        step,
    )
}

/// Exact bisection root of α² - (q - a²)α - a² = 0 on (0, 1].
pub fn alpha_by_bisection(a: f64, q: f64) -> f64 {
    let f = |t: f64| t * t - (q - a * a) * t - a * a;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A generated QCQP with `p` random equality rows through a strictly feasible point.
pub fn instance_with_equalities(
    seed: u64,
    n: usize,
    m: usize,
    p: usize,
) -> ialm::qcqp::QcqpInstance {
    use rand::SeedableRng;
    let mut inst =
        ialm::qcqp::generate_instance(seed, n, m, ialm::qcqp::Convexity::Convex, 1.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let a = Matrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
    let anchor = Vector::from_fn(n, |_, _| rng.random_range(-0.02..0.02));
    let b = &a * &anchor;
    inst.eq_a = (0..p).map(|i| a.row(i).iter().copied().collect()).collect();
    inst.eq_b = b.iter().copied().collect();
    inst
}
