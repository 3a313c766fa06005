mod common;

use common::{alpha_by_bisection, box_normal_cone_distance, gaussian_vector, with_spectrum};
use ialm::apg::{alpha_next, momentum_weight, solve, ApgConfig, ApgStatus, Composite, StopRule};
use ialm::problem::BoxSet;
use ialm::{Matrix, Result, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ½ (x - x*)ᵀ Q (x - x*) over Rⁿ or a box.
struct Quadratic {
    q: Matrix,
    center: Vector,
    bounds: Option<BoxSet>,
}

impl Composite for Quadratic {
    fn smooth_grad(&self, x: &Vector, grad: &mut Vector) -> Result<f64> {
        let d = x - &self.center;
        grad.copy_from(&(&self.q * &d));
        Ok(0.5 * d.dot(grad))
    }

    fn smooth_value(&self, x: &Vector) -> Result<f64> {
        let d = x - &self.center;
        Ok(0.5 * d.dot(&(&self.q * &d)))
    }

    fn prox(&self, point: &Vector, _step: f64) -> Result<Vector> {
        Ok(match &self.bounds {
            Some(b) => b.project(point),
            None => point.clone(),
        })
    }

    fn stationarity(&self, x: &Vector, grad: &Vector) -> Option<f64> {
        Some(match &self.bounds {
            Some(b) => b.stationarity_residual(x, grad).norm(),
            None => grad.norm(),
        })
    }
}

/// Random Q with λmax = l, λmin = mu and `zeros` extra null directions.
fn spectrum(rng: &mut ChaCha8Rng, n: usize, l: f64, mu: f64, zeros: usize) -> Matrix {
    use rand::Rng;
    let mut e: Vec<f64> = (0..n).map(|_| rng.random_range(mu..=l)).collect();
    e[0] = l;
    e[1] = mu;
    for v in e.iter_mut().skip(2).take(zeros) {
        *v = 0.0;
    }
    with_spectrum(rng, &e)
}

#[test]
fn convex_envelope_on_known_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..10 {
        let n = [5, 20, 60, 120, 200][case % 5];
        let l = 1.0 + case as f64;
        let q = spectrum(&mut rng, n, l, 0.0, n / 3);
        let center = gaussian_vector(&mut rng, n);
        let x0 = gaussian_vector(&mut rng, n) * 3.0;
        let prob = Quadratic {
            q,
            center: center.clone(),
            bounds: None,
        };
        let cfg = ApgConfig::new(l, 0.0, StopRule::IterCount)
            .unwrap()
            .with_max_iters(500)
            .with_history();
        let res = solve(&prob, &cfg, &x0).unwrap();
        let r2 = (&x0 - &center).norm_squared();
        for (i, gap) in res.history.iter().enumerate() {
            let k = (i + 1) as f64;
            let bound = 2.0 * l * r2 / ((k + 1.0) * (k + 1.0));
            assert!(*gap <= bound + 1e-9, "case {case} k {k}: {gap} > {bound}");
        }
    }
}

#[test]
fn strongly_convex_envelope_on_known_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10 {
        let n = [5, 20, 60, 120, 200][case % 5];
        let l = 10.0;
        let mu = [0.01, 0.1, 1.0, 5.0, 10.0][case % 5];
        let q = spectrum(&mut rng, n, l, mu, 0);
        let center = gaussian_vector(&mut rng, n);
        let x0 = gaussian_vector(&mut rng, n);
        let prob = Quadratic {
            q,
            center: center.clone(),
            bounds: None,
        };
        let cfg = ApgConfig::new(l, mu, StopRule::IterCount)
            .unwrap()
            .with_max_iters(500)
            .with_history();
        let res = solve(&prob, &cfg, &x0).unwrap();
        let r2 = (&x0 - &center).norm_squared();
        let rate = 1.0 - (mu / l).sqrt();
        for (i, gap) in res.history.iter().enumerate() {
            let k = (i + 1) as i32;
            let bound = 0.5 * (l + mu) * r2 * rate.powi(k);
            assert!(*gap <= bound + 1e-9, "case {case} k {k}: {gap} > {bound}");
        }
    }
}

#[test]
fn alpha_matches_fista_sequence_when_q_is_zero() {
    // with q = 0 and α_0 = 1, α_k = 1 / t_k for t_{k+1} = (1 + √(1 + 4t_k²)) / 2
    let mut t = 1.0f64;
    let mut a = 1.0f64;
    for _ in 0..200 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let a_next = alpha_next(a, 0.0).unwrap();
        assert!((a_next - 1.0 / t_next).abs() <= 1e-12 * (1.0 / t_next).max(1e-3));
        let w_fista = (t - 1.0) / t_next;
        assert!((momentum_weight(a, a_next).unwrap() - w_fista).abs() <= 1e-12);
        t = t_next;
        a = a_next;
    }
}

#[test]
fn stationarity_stop_matches_projection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 30;
    let q = spectrum(&mut rng, n, 4.0, 0.0, 5);
    let center = gaussian_vector(&mut rng, n) * 2.0;
    let bounds = BoxSet::symmetric(n, 1.0).unwrap();
    let prob = Quadratic {
        q: q.clone(),
        center: center.clone(),
        bounds: Some(bounds),
    };
    let tol = 1e-8;
    let cfg = ApgConfig::new(4.0, 0.0, StopRule::GradientMapNorm(tol)).unwrap();
    let res = solve(&prob, &cfg, &Vector::zeros(n)).unwrap();
    assert_eq!(res.status, ApgStatus::Converged);
    let grad = &q * (&res.x - &center);
    let lo = vec![-1.0; n];
    let hi = vec![1.0; n];
    let dist = box_normal_cone_distance(&grad, &res.x, &lo, &hi);
    assert!(dist <= tol);
    assert!((dist - res.final_stop_metric).abs() <= 1e-14);
}

#[test]
fn budget_exhaustion_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 10;
    let q = spectrum(&mut rng, n, 1.0, 1e-4, 0);
    let prob = Quadratic {
        q,
        center: gaussian_vector(&mut rng, n),
        bounds: None,
    };
    let cfg = ApgConfig::new(1.0, 0.0, StopRule::GradientMapNorm(1e-14))
        .unwrap()
        .with_max_iters(5);
    let res = solve(&prob, &cfg, &Vector::zeros(n)).unwrap();
    assert_eq!(res.status, ApgStatus::BudgetExhausted);
    assert_eq!(res.iters_used, 5);
}

#[test]
fn objective_gap_rule_stops_below_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 25;
    let q = spectrum(&mut rng, n, 2.0, 0.0, 4);
    let prob = Quadratic {
        q,
        center: gaussian_vector(&mut rng, n),
        bounds: None,
    };
    let rule = StopRule::ObjectiveGap {
        reference: 0.0,
        tol: 1e-6,
    };
    let cfg = ApgConfig::new(2.0, 0.0, rule).unwrap();
    let res = solve(&prob, &cfg, &Vector::zeros(n)).unwrap();
    assert_eq!(res.status, ApgStatus::Converged);
    assert!(prob.smooth_value(&res.x).unwrap() <= 1e-6);
}

#[test]
fn solve_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let n = 40;
    let q = spectrum(&mut rng, n, 3.0, 0.0, 3);
    let prob = Quadratic {
        q,
        center: gaussian_vector(&mut rng, n),
        bounds: Some(BoxSet::symmetric(n, 0.5).unwrap()),
    };
    let cfg = ApgConfig::new(3.0, 0.0, StopRule::GradientMapNorm(1e-9)).unwrap();
    let a = solve(&prob, &cfg, &Vector::zeros(n)).unwrap();
    let b = solve(&prob, &cfg, &Vector::zeros(n)).unwrap();
    assert_eq!(a.iters_used, b.iters_used);
    assert!(a
        .x
        .iter()
        .zip(b.x.iter())
        .all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn rejects_bad_configuration() {
    assert!(ApgConfig::new(0.0, 0.0, StopRule::IterCount).is_err());
    assert!(ApgConfig::new(1.0, 2.0, StopRule::IterCount).is_err());
    assert!(alpha_next(0.0, 0.5).is_err());
    assert!(alpha_next(0.5, 1.5).is_err());
}

proptest! {
    #[test]
    fn alpha_stays_in_unit_interval(a in 1e-6f64..=1.0, q in 0.0f64..=1.0) {
        let next = alpha_next(a, q).unwrap();
        prop_assert!(next > 0.0 && next <= 1.0);
        let oracle = alpha_by_bisection(a, q);
        prop_assert!((next - oracle).abs() <= 1e-12);
        let w = momentum_weight(a, next).unwrap();
        prop_assert!((0.0..1.0).contains(&w));
    }

    #[test]
    fn alpha_sequence_never_leaves_unit_interval(q in 0.0f64..=1.0, steps in 1usize..300) {
        let mut a = if q > 0.0 { q.sqrt() } else { 1.0 };
        for _ in 0..steps {
            a = alpha_next(a, q).unwrap();
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }
}
