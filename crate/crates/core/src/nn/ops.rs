//! Elementwise activations and classification losses.

use ndarray::{Array, Array2, Dimension};

use super::Scalar;

/// Elementwise max(x, 0).
pub fn relu<T: Scalar, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the *input* of the forward pass.
pub fn relu_backward<T: Scalar, D: Dimension>(x: &Array<T, D>, gy: &Array<T, D>) -> Array<T, D> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
    gx
}

/// Row-wise softmax probabilities, computed with the max-shift trick.
pub fn softmax_probs<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch.
///
/// Returns `(loss, grad_logits)`; the gradient already includes the 1/N
/// factor so it can be fed straight into backprop.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> (T, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(labels.len(), n);
    let mut grad = softmax_probs(logits);
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        // -log p_y via logsumexp for stability
        let row = logits.row(i);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln() + max;
        loss = loss + lse - row[y];
        grad[[i, y]] = grad[[i, y]] - T::one();
    }
    grad.mapv_inplace(|v| v * inv_n);
    (loss * inv_n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn relu_and_backward_mask_agree() {
        let x = array![[-1.0, 0.0, 2.0], [3.0, -0.5, 0.1]];
        let y = relu(&x);
        assert_eq!(y, array![[0.0, 0.0, 2.0], [3.0, 0.0, 0.1]]);
        let gy = array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let gx = relu_backward(&x, &gy);
        assert_eq!(gx, array![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let a = array![[1.0, 2.0, 3.0], [100.0, 100.0, 100.0]];
        let p = softmax_probs(&a);
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        let b = a.mapv(|v| v + 1000.0);
        let q = softmax_probs(&b);
        for (x, y) in p.iter().zip(q.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_logsumexp_oracle() {
        let logits = array![[0.2, -1.3, 0.7, 2.0], [3.0, 3.0, 3.0, 3.0]];
        let labels = [2usize, 1];
        let (loss, _) = softmax_cross_entropy(&logits, &labels);
        // independent scalar computation
        let mut expect = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row: Vec<f64> = logits.row(i).to_vec();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            expect += lse - row[y];
        }
        expect /= 2.0;
        assert_abs_diff_eq!(loss, expect, epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut logits = array![[0.5, -0.2, 1.1], [2.0, 0.0, -1.0]];
        let labels = [0usize, 2];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let eps = 1e-6;
        for idx in [(0usize, 0usize), (0, 2), (1, 1)] {
            let orig = logits[idx];
            logits[idx] = orig + eps;
            let (lp, _) = softmax_cross_entropy(&logits, &labels);
            logits[idx] = orig - eps;
            let (lm, _) = softmax_cross_entropy(&logits, &labels);
            logits[idx] = orig;
            assert_abs_diff_eq!(grad[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-8);
        }
    }

    #[test]
    fn dominant_logit_loss_is_tiny() {
        let logits = array![[100.0, 0.0, 0.0]];
        let (loss, _) = softmax_cross_entropy(&logits, &[0]);
        assert!(loss < 1e-6);
    }
}
