//! Principal component projection via cyclic Jacobi eigendecomposition of
//! the feature covariance, plus the PCA-then-logistic-regression probe.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), sorted by descending
/// eigenvalue. Deterministic; vector signs are fixed so the entry of
/// largest magnitude is positive.
pub fn jacobi_eigh(sym: &Mat) -> (Vec<f64>, Mat) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "matrix must be square");
    let mut a = sym.clone();
    // v starts as identity; accumulates rotations as columns.
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }

    let frob: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (frob * 1e-14).max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .unwrap()
            .then(i.cmp(&j))
    });

    let eigvals: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (row, &col) in order.iter().enumerate() {
        let mut vec_row: Vec<f64> = (0..n).map(|k| v.get(k, col)).collect();
        // Sign convention: largest-magnitude entry positive.
        let mut best = 0;
        for (k, val) in vec_row.iter().enumerate() {
            if val.abs() > vec_row[best].abs() {
                best = k;
            }
        }
        if vec_row[best] < 0.0 {
            for val in &mut vec_row {
                *val = -*val;
            }
        }
        vectors.row_mut(row).copy_from_slice(&vec_row);
    }
    (eigvals, vectors)
}

/// Covariance of centered features, `1/(n-1)` normalization.
pub fn covariance(centered: &Mat) -> Mat {
    let n = centered.rows();
    let d = centered.cols();
    let denom = (n.saturating_sub(1)).max(1) as f64;
    let mut cov = Mat::zeros(d, d);
    for i in 0..n {
        let row = centered.row(i);
        for j in 0..d {
            let xj = row[j];
            if xj == 0.0 {
                continue;
            }
            for k in j..d {
                let v = cov.get(j, k) + xj * row[k];
                cov.set(j, k, v);
            }
        }
    }
    for j in 0..d {
        for k in j..d {
            let v = cov.get(j, k) / denom;
            cov.set(j, k, v);
            cov.set(k, j, v);
        }
    }
    cov
}

/// Projection onto the top principal components of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Component directions, one per row.
    pub components: Mat,
    pub eigenvalues: Vec<f64>,
}

impl PcaProjection {
    /// Fit on already-centered (here: standardized) features.
    pub fn fit(centered: &Mat, n_components: usize) -> Result<Self> {
        let cap = centered.rows().min(centered.cols()).min(100);
        if n_components == 0 || n_components > cap {
            return Err(Error::InvalidParam(format!(
                "n_components {n_components} out of range [1, {cap}]"
            )));
        }
        let cov = covariance(centered);
        let (eigvals, vectors) = jacobi_eigh(&cov);
        let components = vectors.select_rows(&(0..n_components).collect::<Vec<_>>());
        Ok(PcaProjection {
            components,
            eigenvalues: eigvals[..n_components].to_vec(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn project(&self, x: &Mat) -> Mat {
        let k = self.components.rows();
        let mut out = Mat::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let row = x.row(i);
            let dst = out.row_mut(i);
            for c in 0..k {
                dst[c] = dot(row, self.components.row(c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Power iteration with deflation: an eigensolver independent of the
    /// Jacobi implementation, used as the oracle.
    fn power_iteration_eigh(sym: &Mat, k: usize) -> (Vec<f64>, Mat) {
        let n = sym.rows();
        let mut deflated = sym.clone();
        let mut vals = Vec::new();
        let mut vecs = Mat::zeros(k, n);
        for comp in 0..k {
            let mut v: Vec<f64> = (0..n)
                .map(|i| if i == comp % n { 1.0 } else { 0.1 + 0.01 * i as f64 })
                .collect();
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let mut next = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        next[i] += deflated.get(i, j) * v[j];
                    }
                }
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-300 {
                    break;
                }
                for x in &mut next {
                    *x /= norm;
                }
                let mut new_lambda = 0.0;
                for i in 0..n {
                    let mut av = 0.0;
                    for j in 0..n {
                        av += deflated.get(i, j) * next[j];
                    }
                    new_lambda += next[i] * av;
                }
                let done = (new_lambda - lambda).abs() < 1e-14 * new_lambda.abs().max(1.0);
                v = next;
                lambda = new_lambda;
                if done {
                    break;
                }
            }
            vals.push(lambda);
            vecs.row_mut(comp).copy_from_slice(&v);
            for i in 0..n {
                for j in 0..n {
                    let d = deflated.get(i, j) - lambda * v[i] * v[j];
                    deflated.set(i, j, d);
                }
            }
        }
        (vals, vecs)
    }

    fn center(x: &Mat) -> Mat {
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for i in 0..x.rows() {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n;
            }
        }
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, m) in mean.iter().enumerate() {
                out.set(i, j, out.get(i, j) - m);
            }
        }
        out
    }

    #[test]
    fn components_match_power_iteration_oracle_up_to_sign() {
        let mut r = crate::rng::rng(57);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| r.random::<f64>() * 3.0 - 1.5).collect())
            .collect();
        let x = center(&Mat::from_rows(&rows));
        let proj = PcaProjection::fit(&x, 4).unwrap();
        let cov = covariance(&x);
        let (oracle_vals, oracle_vecs) = power_iteration_eigh(&cov, 4);
        for c in 0..4 {
            assert!(
                (proj.eigenvalues[c] - oracle_vals[c]).abs()
                    < 1e-8 * oracle_vals[c].abs().max(1.0),
                "eigenvalue {c}"
            );
            let alignment = dot(proj.components.row(c), oracle_vecs.row(c)).abs();
            assert!(
                (alignment - 1.0).abs() < 1e-6,
                "component {c} alignment {alignment}"
            );
        }
    }

    #[test]
    fn rank_one_matrix_single_component_preserves_variance() {
        let base = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| base.iter().map(|&b| b * (i as f64 - 5.5)).collect())
            .collect();
        let x = center(&Mat::from_rows(&rows));
        let proj = PcaProjection::fit(&x, 1).unwrap();
        let total: f64 = {
            let cov = covariance(&x);
            (0..4).map(|j| cov.get(j, j)).sum()
        };
        assert!((proj.eigenvalues[0] - total).abs() < 1e-9 * total);
    }

    #[test]
    fn component_count_validation() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.5]]);
        assert!(PcaProjection::fit(&x, 0).is_err());
        assert!(PcaProjection::fit(&x, 3).is_err()); // cap = min(3, 2, 100) = 2
        assert!(PcaProjection::fit(&x, 2).is_ok());
    }
}
