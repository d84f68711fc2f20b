//! K-nearest-neighbors scoring over standardized features.

use crate::mat::Mat;

/// Euclidean neighbor indices, nearest first. Distance ties break toward the
/// lower training index. A bounded max-heap keeps the k best; the exhaustive
/// distance-sort oracle in tests checks the result.
pub fn nearest_neighbors(train: &Mat, query: &[f64], k: usize) -> Vec<usize> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // Max-heap keeps the worst candidate on top.
            self.0
                .partial_cmp(&other.0)
                .unwrap()
                .then(self.1.cmp(&other.1))
        }
    }

    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
    for i in 0..train.rows() {
        let row = train.row(i);
        let d2: f64 = row
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        heap.push(Entry(d2, i));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut picked: Vec<(f64, usize)> = heap.into_iter().map(|Entry(d, i)| (d, i)).collect();
    picked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    picked.into_iter().map(|(_, i)| i).collect()
}

/// Fraction of positive labels among the k nearest training points.
pub fn knn_score(train: &Mat, labels: &[u8], query: &[f64], k: usize) -> f64 {
    let neighbors = nearest_neighbors(train, query, k);
    let pos = neighbors.iter().filter(|&&i| labels[i] == 1).count();
    pos as f64 / neighbors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn query_on_training_point_k1_returns_its_label() {
        let train = Mat::from_rows(&[vec![0.0, 0.0], vec![5.0, 5.0], vec![-3.0, 1.0]]);
        let labels = [0, 1, 0];
        assert_eq!(knn_score(&train, &labels, &[5.0, 5.0], 1), 1.0);
        assert_eq!(knn_score(&train, &labels, &[0.0, 0.0], 1), 0.0);
    }

    #[test]
    fn k_equals_n_returns_global_positive_rate() {
        let train = Mat::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let labels = [1, 0, 0, 0];
        for q in [-10.0, 0.7, 99.0] {
            assert_eq!(knn_score(&train, &labels, &[q], 4), 0.25);
        }
    }

    #[test]
    fn neighbor_sets_match_exhaustive_sort_oracle() {
        let mut r = crate::rng::rng(101);
        let n = 30;
        let d = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random::<f64>() * 10.0).collect())
            .collect();
        let train = Mat::from_rows(&rows);
        for _ in 0..25 {
            let query: Vec<f64> = (0..d).map(|_| r.random::<f64>() * 10.0).collect();
            let fast = nearest_neighbors(&train, &query, 5);

            let mut all: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let d2: f64 = train
                        .row(i)
                        .iter()
                        .zip(&query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, i)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let oracle: Vec<usize> = all[..5].iter().map(|&(_, i)| i).collect();
            assert_eq!(fast, oracle);
        }
    }
}
