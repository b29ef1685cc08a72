#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Closed-form fold about the line along `l`: identity when `l . x_perp > 0`
/// (with `x_perp = (-x_2, x_1)`), otherwise the reflection about the line.
pub fn fold_oracle(l: [f64; 2], x: [f64; 2]) -> [f64; 2] {
    let [lx, ly] = l;
    if lx * -x[1] + ly * x[0] > 0.0 {
        return x;
    }
    let m = [[lx * lx - ly * ly, 2.0 * lx * ly], [2.0 * lx * ly, ly * ly - lx * lx]];
    [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
}

/// Two Gaussian clouds in the plane with labels +1 / -1.
pub fn binary_problem(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        xs.push(vec![a + 0.8 * y, b - 0.4 * y]);
        ys.push(y);
    }
    (xs, ys)
}

fn gram(xs: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            k[i * n + j] = (-gamma * d2).exp();
        }
    }
    k
}

/// Projection onto `{0 <= l <= c, y . l = 0}` by bisection on the multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(&vi, &yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let balance = |l: &[f64]| -> f64 { l.iter().zip(y).map(|(a, b)| a * b).sum() };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // balance is non-increasing in nu
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Dual objective `sum l - 1/2 l'Ql` maximised by accelerated projected
/// gradient. Returns `(lambda, objective)`.
pub fn dual_oracle(xs: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let k = gram(xs, gamma);
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let objective = |l: &[f64]| -> f64 {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += l[i] * l[j] * q(i, j);
            }
        }
        l.iter().sum::<f64>() - 0.5 * quad
    };
    // Lipschitz constant of the gradient: bounded by the largest row sum
    let lip = (0..n).map(|i| (0..n).map(|j| q(i, j).abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut l = vec![0.0; n];
    let mut z = l.clone();
    let mut t: f64 = 1.0;
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q(i, j) * z[j]).sum::<f64>()).collect();
        let step: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a + g / lip).collect();
        let next = project(&step, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next.iter().zip(&l).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        l = next;
        t = t_next;
    }
    let obj = objective(&l);
    (l, obj)
}
