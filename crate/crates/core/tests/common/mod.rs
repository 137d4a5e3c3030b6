#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tankbarrier::qp::QpProblem;
use tankbarrier::scenario::Scenario;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).expect("bundled scenario loads")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Random feasible QP with `n + m ≤ 12` variables.
///
/// Even seeds give a dense SPD Hessian and dense rows; odd seeds mimic the
/// controller layout: `n` joint velocities with a scalar weight, `m` slacks,
/// task rows each relaxed by their own slack plus hard rows. Feasibility
/// comes from building `b = G z₀ − s` with `s ≥ 0`, a third of the rows
/// tight at `z₀`.
pub fn random_qp(seed: u64) -> QpProblem {
    let mut r = rng(seed);
    if seed.is_multiple_of(2) {
        let dim = r.random_range(1..=12usize);
        let rows = r.random_range(0..=2 * dim);
        let a = DMatrix::from_fn(dim, dim, |_, _| uniform(&mut r, -1.0, 1.0));
        let mut hessian = a.transpose() * &a;
        for i in 0..dim {
            hessian[(i, i)] += 0.1;
        }
        let linear = DVector::from_fn(dim, |_, _| uniform(&mut r, -2.0, 2.0));
        let constraints = DMatrix::from_fn(rows, dim, |_, _| uniform(&mut r, -1.0, 1.0));
        let z0 = DVector::from_fn(dim, |_, _| uniform(&mut r, -1.0, 1.0));
        let gap = DVector::from_fn(rows, |_, _| {
            if r.random_bool(1.0 / 3.0) {
                0.0
            } else {
                uniform(&mut r, 0.0, 1.0)
            }
        });
        let bounds = &constraints * z0 - gap;
        QpProblem {
            hessian,
            linear,
            constraints,
            bounds,
        }
    } else {
        let n = r.random_range(1..=7usize);
        let m = r.random_range(0..=(12 - n).min(5));
        let hard = r.random_range(0..=n);
        let dim = n + m;
        let weight = 1.0 + 10.0 * uniform(&mut r, 0.0, 3.0).powi(2);
        let slack_weight = 100.0;
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut linear = DVector::zeros(dim);
        for i in 0..n {
            hessian[(i, i)] = 2.0 * weight;
            linear[i] = -2.0 * weight * uniform(&mut r, -1.0, 1.0);
        }
        for i in n..dim {
            hessian[(i, i)] = 2.0 * slack_weight;
        }
        let rows = m + hard;
        let mut constraints = DMatrix::zeros(rows, dim);
        for row in 0..rows {
            for j in 0..n {
                constraints[(row, j)] = uniform(&mut r, -1.5, 1.5);
            }
            if row < m {
                constraints[(row, n + row)] = 1.0;
            }
        }
        let z0 = DVector::from_fn(dim, |_, _| uniform(&mut r, -1.0, 1.0));
        let gap = DVector::from_fn(rows, |_, _| {
            if r.random_bool(1.0 / 3.0) {
                0.0
            } else {
                uniform(&mut r, 0.0, 2.0)
            }
        });
        let bounds = &constraints * z0 - gap;
        QpProblem {
            hessian,
            linear,
            constraints,
            bounds,
        }
    }
}

/// Objective `½ zᵀQz + cᵀz`, computed here rather than through the library.
pub fn objective(p: &QpProblem, z: &DVector<f64>) -> f64 {
    0.5 * z.dot(&(&p.hessian * z)) + p.linear.dot(z)
}

/// Independent optimality residuals of a primal-dual pair: stationarity,
/// primal feasibility, dual feasibility, complementarity (all absolute).
pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>) -> [f64; 4] {
    let grad = &p.hessian * z + &p.linear - p.constraints.transpose() * lambda;
    let slack = &p.constraints * z - &p.bounds;
    let primal = slack.iter().fold(0.0_f64, |m, s| m.max(-s));
    let dual = lambda.iter().fold(0.0_f64, |m, l| m.max(-l));
    let comp = lambda
        .iter()
        .zip(slack.iter())
        .fold(0.0_f64, |m, (l, s)| m.max((l * s).abs()));
    [grad.amax(), primal, dual, comp]
}

/// Projected accelerated gradient ascent on the dual
///
/// `max_{λ ≥ 0}  −½ (Gᵀλ − c)ᵀ Q⁻¹ (Gᵀλ − c) + bᵀλ`
///
/// with adaptive restart. Every dual value is a lower bound on the primal
/// optimum, so iteration stops once it comes within `gap` of `target` (an
/// objective attained by some independently verified feasible point), or when
/// the iterates stall. Returns the multipliers, the dual value and the primal
/// point `z(λ) = Q⁻¹(Gᵀλ − c)`.
pub fn dual_oracle(p: &QpProblem, target: f64, gap: f64) -> (DVector<f64>, f64, DVector<f64>) {
    let q_inv = p
        .hessian
        .clone()
        .try_inverse()
        .expect("oracle needs an invertible Hessian");
    let g = &p.constraints;
    let rows = g.nrows();
    let z_of = |lambda: &DVector<f64>| &q_inv * (g.transpose() * lambda - &p.linear);
    let dual_value = |lambda: &DVector<f64>| {
        let w = g.transpose() * lambda - &p.linear;
        -0.5 * w.dot(&(&q_inv * &w)) + p.bounds.dot(lambda)
    };
    if rows == 0 {
        let z = z_of(&DVector::zeros(0));
        return (DVector::zeros(0), dual_value(&DVector::zeros(0)), z);
    }
    let curvature = g * &q_inv * g.transpose();
    let lipschitz = curvature.symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lipschitz;

    let mut lambda = DVector::zeros(rows);
    let mut y = lambda.clone();
    let mut t = 1.0_f64;
    let mut best = dual_value(&lambda);
    for _ in 0..200_000 {
        if target - best <= gap {
            break;
        }
        let grad = &p.bounds - g * z_of(&y);
        let next = (&y + grad * step).map(|l| l.max(0.0));
        let value = dual_value(&next);
        let moved = (&next - &lambda).amax();
        if value < best {
            // Restart the momentum when the ascent stalls.
            t = 1.0;
            y = lambda.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lambda) * ((t - 1.0) / t_next);
        lambda = next;
        t = t_next;
        best = value;
        if moved <= 1e-15 * (1.0 + lambda.amax()) {
            break;
        }
    }
    let z = z_of(&lambda);
    (lambda, best, z)
}

/// Central difference of a scalar function along coordinate `i`.
pub fn central_diff(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, i: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn numeric_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| central_diff(&f, x, i, h))
}

/// `‖a − b‖ / max(‖a‖, floor)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(floor)
}
