//! Logistic regression solvers: second-order batch descent for L2 and
//! cyclic coordinate descent with soft-thresholding for L1.
//!
//! Both minimize `sum_i log(1 + exp(-y_i f_i)) + (1/c) * penalty(w)` with the
//! bias unpenalized, and stop when the largest parameter update falls below
//! 1e-6 or after 1000 iterations.

use crate::mat::{dot, Mat};

pub const TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearParams {
    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.bias
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-m)) without overflow.
fn logloss_margin(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn total_loss(x: &Mat, y: &[u8], params: &LinearParams, l1: f64, l2: f64) -> f64 {
    let mut loss = 0.0;
    for (i, &t) in y.iter().enumerate() {
        let f = params.decision(x.row(i));
        let m = if t == 1 { f } else { -f };
        loss += logloss_margin(m);
    }
    loss += l1 * params.weights.iter().map(|w| w.abs()).sum::<f64>();
    loss += 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>();
    loss
}

/// Public hook for oracle tests: objective value of an arbitrary parameter
/// vector under the same regularized loss the solvers minimize.
pub fn objective(x: &Mat, y: &[u8], params: &LinearParams, l1: f64, l2: f64) -> f64 {
    total_loss(x, y, params, l1, l2)
}

/// Solve the symmetric positive definite system via Cholesky, in place.
fn cholesky_solve(a: &mut Mat, b: &mut [f64]) -> bool {
    let n = b.len();
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let l = a.get(j, k);
            d -= l * l;
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        a.set(j, j, d);
        for i in j + 1..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= a.get(i, k) * a.get(j, k);
            }
            a.set(i, j, v / d);
        }
    }
    // Forward substitution.
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a.get(i, k) * b[k];
        }
        b[i] = v / a.get(i, i);
    }
    // Back substitution.
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a.get(k, i) * b[k];
        }
        b[i] = v / a.get(i, i);
    }
    true
}

/// Newton descent on the L2-regularized logistic loss. `l2 = 1/c`; pass 0
/// for the unregularized fit used after PCA projection.
pub fn fit_l2(x: &Mat, y: &[u8], l2: f64) -> LinearParams {
    let n = x.rows();
    let d = x.cols();
    let mut params = LinearParams {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut loss = total_loss(x, y, &params, 0.0, l2);

    for _ in 0..MAX_ITER {
        // Gradient and Hessian over [weights, bias].
        let mut grad = vec![0.0; d + 1];
        let mut hess = Mat::zeros(d + 1, d + 1);
        for i in 0..n {
            let row = x.row(i);
            let p = sigmoid(params.decision(row));
            let r = p - f64::from(y[i]);
            let s = (p * (1.0 - p)).max(1e-12);
            for (j, &xj) in row.iter().enumerate() {
                grad[j] += r * xj;
                for (k, &xk) in row.iter().enumerate().skip(j) {
                    let v = hess.get(j, k) + s * xj * xk;
                    hess.set(j, k, v);
                }
                let v = hess.get(j, d) + s * xj;
                hess.set(j, d, v);
            }
            grad[d] += r;
            let v = hess.get(d, d) + s;
            hess.set(d, d, v);
        }
        for j in 0..d {
            grad[j] += l2 * params.weights[j];
            let v = hess.get(j, j) + l2;
            hess.set(j, j, v);
        }
        // Mirror the upper triangle and jitter the diagonal so the factor
        // exists even when features are collinear.
        for j in 0..=d {
            for k in j + 1..=d {
                hess.set(k, j, hess.get(j, k));
            }
            let v = hess.get(j, j) + 1e-12;
            hess.set(j, j, v);
        }

        let mut step = grad.clone();
        if !cholesky_solve(&mut hess, &mut step) {
            break;
        }

        // Step halving keeps the loss non-increasing.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = params.clone();
            for j in 0..d {
                cand.weights[j] -= scale * step[j];
            }
            cand.bias -= scale * step[d];
            let cand_loss = total_loss(x, y, &cand, 0.0, l2);
            if cand_loss.is_finite() && cand_loss <= loss {
                let max_update = step
                    .iter()
                    .map(|s| (scale * s).abs())
                    .fold(0.0f64, f64::max);
                params = cand;
                loss = cand_loss;
                accepted = true;
                if max_update < TOL {
                    return params;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    params
}

fn soft_threshold(a: f64, lambda: f64) -> f64 {
    if a > lambda {
        a - lambda
    } else if a < -lambda {
        a + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent with soft-thresholding on the L1-regularized
/// logistic loss. `l1 = 1/c`.
pub fn fit_l1(x: &Mat, y: &[u8], l1: f64) -> LinearParams {
    let n = x.rows();
    let d = x.cols();
    let mut weights = vec![0.0; d];
    let mut bias = 0.0;
    // Running margins f = Xw + b.
    let mut f = vec![0.0; n];

    for _ in 0..MAX_ITER {
        let mut max_update = 0.0f64;

        for j in 0..d {
            let mut g = 0.0;
            let mut h = 0.0;
            for i in 0..n {
                let p = sigmoid(f[i]);
                let xij = x.get(i, j);
                g += xij * (p - f64::from(y[i]));
                h += xij * xij * (p * (1.0 - p)).max(1e-9);
            }
            if h <= 0.0 {
                continue;
            }
            let w_new = soft_threshold(h * weights[j] - g, l1) / h;
            let delta = w_new - weights[j];
            if delta != 0.0 {
                for i in 0..n {
                    f[i] += delta * x.get(i, j);
                }
                weights[j] = w_new;
                max_update = max_update.max(delta.abs());
            }
        }

        // Unpenalized bias update.
        let mut g = 0.0;
        let mut h = 0.0;
        for i in 0..n {
            let p = sigmoid(f[i]);
            g += p - f64::from(y[i]);
            h += (p * (1.0 - p)).max(1e-9);
        }
        let delta = -g / h;
        bias += delta;
        for fi in &mut f {
            *fi += delta;
        }
        max_update = max_update.max(delta.abs());

        if max_update < TOL {
            break;
        }
    }
    LinearParams { weights, bias }
}
