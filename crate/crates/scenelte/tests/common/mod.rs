//! Independent oracles shared by the integration tests.
//!
//! Everything here is deliberately written from the definitions, without
//! touching the implementation paths it checks: a triple-loop convolution,
//! central finite differences of the training loss, a projected-gradient
//! quadratic-programming solver for the SVM dual, and a brute-force
//! partition enumerator.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use scenelte::cnn::{batch_loss_and_grads, CnnModel, Unrolled};
use scenelte::embed::MultiChannelImage;

/// Triple-loop convolution oracle: o_i = sum over the full P x F x w window.
pub fn naive_conv(image: &MultiChannelImage, filter: &Array3<f64>, bias: f64) -> Vec<f64> {
    let (p, f, t) = (image.channels(), image.f_dim(), image.t_dim());
    let w = filter.shape()[2];
    let mut out = Vec::with_capacity(t - w + 1);
    for i in 0..=(t - w) {
        let mut acc = 0.0;
        for k in 0..p {
            for l in 0..f {
                for m in 0..w {
                    acc += image.values[(k, l, i + m)] * filter[(k, l, m)];
                }
            }
        }
        out.push((acc + bias).max(0.0));
    }
    out
}

/// Pre-activation variant of the oracle (no bias, no ReLU).
pub fn naive_conv_pre(image: &MultiChannelImage, filter: &Array3<f64>) -> Vec<f64> {
    let (p, f, t) = (image.channels(), image.f_dim(), image.t_dim());
    let w = filter.shape()[2];
    let mut out = Vec::with_capacity(t - w + 1);
    for i in 0..=(t - w) {
        let mut acc = 0.0;
        for k in 0..p {
            for l in 0..f {
                for m in 0..w {
                    acc += image.values[(k, l, i + m)] * filter[(k, l, m)];
                }
            }
        }
        out.push(acc);
    }
    out
}

/// Central finite differences of the batch loss over every parameter.
pub fn finite_difference_grads(
    model: &CnnModel,
    batch: &[(&Unrolled, usize)],
    lambda: f64,
    delta: f64,
) -> Vec<f64> {
    let base = model.flatten_params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += delta;
        probe.set_params(&plus);
        let (lp, _) = batch_loss_and_grads(&probe, batch, lambda);
        let mut minus = base.clone();
        minus[i] -= delta;
        probe.set_params(&minus);
        let (lm, _) = batch_loss_and_grads(&probe, batch, lambda);
        out.push((lp - lm) / (2.0 * delta));
    }
    out
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-8 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Projected-gradient solver for the SVM dual:
/// min 1/2 a'Qa - sum(a), 0 <= a <= cost, sum(y a) = 0, Q_ij = y_i y_j K_ij.
///
/// Returns the dual variables and the bias (mean KKT bias over free
/// support vectors).
pub fn qp_svm_oracle(
    kernel: &dyn Fn(usize, usize) -> f64,
    y: &[f64],
    cost: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel(i, j);
    // Safe Lipschitz bound for the gradient step.
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            max_abs = max_abs.max(q(i, j).abs());
        }
    }
    let step = 1.0 / (max_abs * n as f64).max(1e-12);

    let mut alpha = vec![0.0f64; n];
    for _ in 0..iters {
        let mut grad = vec![-1.0f64; n];
        for i in 0..n {
            for j in 0..n {
                grad[i] += q(i, j) * alpha[j];
            }
        }
        let proposed: Vec<f64> = (0..n).map(|i| alpha[i] - step * grad[i]).collect();
        alpha = project_box_hyperplane(&proposed, y, cost);
    }

    // Bias from the free support vectors.
    let mut bias_sum = 0.0;
    let mut count = 0usize;
    let eps = cost * 1e-6;
    for i in 0..n {
        if alpha[i] > eps && alpha[i] < cost - eps {
            let u: f64 = (0..n).map(|j| alpha[j] * y[j] * kernel(i, j)).sum();
            bias_sum += y[i] - u;
            count += 1;
        }
    }
    let bias = if count > 0 {
        bias_sum / count as f64
    } else {
        // All alphas at bounds: take the feasible midpoint.
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..n {
            let u: f64 = (0..n).map(|j| alpha[j] * y[j] * kernel(i, j)).sum();
            let margin = y[i] - u;
            if (y[i] > 0.0 && alpha[i] < eps) || (y[i] < 0.0 && alpha[i] > cost - eps) {
                hi = hi.min(margin);
            } else {
                lo = lo.max(margin);
            }
        }
        (lo.max(-1e6) + hi.min(1e6)) / 2.0
    };
    (alpha, bias)
}

/// Euclidean projection onto {0 <= a <= cost} intersected with {y'a = 0},
/// via bisection on the hyperplane multiplier.
fn project_box_hyperplane(alpha: &[f64], y: &[f64], cost: f64) -> Vec<f64> {
    let clipped = |nu: f64| -> Vec<f64> {
        alpha
            .iter()
            .zip(y)
            .map(|(&a, &yi)| (a - nu * yi).clamp(0.0, cost))
            .collect()
    };
    let residual = |nu: f64| -> f64 {
        clipped(nu).iter().zip(y).map(|(&a, &yi)| yi * a).sum()
    };
    let bound = alpha.iter().fold(cost, |m, &a| m.max(a.abs())) + cost + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    // residual is non-increasing in nu.
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clipped((lo + hi) / 2.0)
}

/// Decision values of a dual solution on the training set.
pub fn decision_values(
    kernel: &dyn Fn(usize, usize) -> f64,
    y: &[f64],
    alpha: &[f64],
    bias: f64,
) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * y[j] * kernel(i, j)).sum::<f64>() + bias)
        .collect()
}

/// Brute-force partition enumerator over 0..n: every two-part split with
/// part A containing index 0, and the within-part affinity objective.
pub fn brute_force_best_partition(abar: &Array2<f64>) -> (f64, Vec<usize>, Vec<usize>) {
    let n = abar.nrows();
    assert!((2..=20).contains(&n));
    let objective = |part: &[usize]| -> f64 {
        part.iter()
            .flat_map(|&i| part.iter().map(move |&j| abar[(i, j)]))
            .sum()
    };
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for mask in 0u64..(1 << (n - 1)) - 1 {
        let mut left = vec![0usize];
        let mut right = Vec::new();
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        let e = objective(&left) + objective(&right);
        if best.as_ref().map(|(b, _, _)| e > *b).unwrap_or(true) {
            best = Some((e, left, right));
        }
    }
    best.expect("n >= 2")
}

/// Random row-stochastic matrix symmetrized to an affinity.
pub fn random_symmetrized_stochastic(n: usize, rng: &mut impl rand::Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0));
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        for j in 0..n {
            a[(i, j)] /= s;
        }
    }
    (&a + &a.t()) / 2.0
}
