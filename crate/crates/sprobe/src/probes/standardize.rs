//! Per-feature z-scoring frozen at train time.

use crate::mat::Mat;

/// Per-feature mean and scale. Zero-variance features get scale 1 so they
/// pass through centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fit from training features (population standard deviation).
    pub fn fit(x: &Mat) -> Standardizer {
        let n = x.rows().max(1) as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for i in 0..x.rows() {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                let dlt = v - mean[j];
                var[j] += dlt * dlt;
            }
        }
        let scale = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for j in 0..src.len() {
                dst[j] = (src[j] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_features_have_zero_mean_unit_scale() {
        let x = Mat::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]]);
        let s = Standardizer::fit(&x);
        let z = s.apply(&x);
        let col0: Vec<f64> = (0..3).map(|i| z.get(i, 0)).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        // Constant feature passes through centered, not divided by zero.
        assert_eq!(s.scale[1], 1.0);
        assert_eq!(z.get(0, 1), 0.0);
    }
}
