//! Fully connected layer.

use ndarray::{Array1, Array2, Ix2};
use rand::Rng;

use super::{fan_in_uniform, Param, Scalar};

/// Affine map y = W x + b applied row-wise to a batch.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T, Ix2>, // (out, in)
    pub bias: Param<T, ndarray::Ix1>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(fan_in_uniform(Ix2(out_dim, in_dim), in_dim, rng)),
            bias: Param::new(Array1::zeros(out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dim().0
    }

    /// x: (N, in) -> (N, out).
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.value.t());
        for mut row in y.rows_mut() {
            ndarray::Zip::from(&mut row)
                .and(&self.bias.value)
                .for_each(|v, &b| *v = *v + b);
        }
        y
    }

    /// Returns (grad_x, grad_weight, grad_bias) for gy: (N, out).
    pub fn backward(&self, x: &Array2<T>, gy: &Array2<T>) -> (Array2<T>, Array2<T>, Array1<T>) {
        let gx = gy.dot(&self.weight.value);
        let gw = gy.t().dot(x);
        let gb = gy.sum_axis(ndarray::Axis(0));
        (gx, gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forward_matches_manual_computation() {
        let mut rng = crate::seed::rng(7);
        let lin = Linear::<f64>::new(3, 2, &mut rng);
        let x = ndarray::array![[1.0, 2.0, 3.0], [0.5, -1.0, 4.0]];
        let y = lin.forward(&x);
        for n in 0..2 {
            for o in 0..2 {
                let mut acc = lin.bias.value[o];
                for i in 0..3 {
                    acc += lin.weight.value[[o, i]] * x[[n, i]];
                }
                assert_abs_diff_eq!(y[[n, o]], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(8);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let x = ndarray::Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 + 1.0) * 0.3 - j as f64 * 0.1);
        let loss = |l: &Linear<f64>, x: &Array2<f64>| -> f64 {
            l.forward(x).iter().map(|v| v * v).sum::<f64>() * 0.5
        };
        let y = lin.forward(&x);
        let (gx, gw, gb) = lin.backward(&x, &y);
        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in [(0usize, 0usize), (1, 3)] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = loss(&lin, &xp);
            xp[idx] = orig - eps;
            let lm = loss(&lin, &xp);
            xp[idx] = orig;
            assert_abs_diff_eq!(gx[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
        for idx in [(0usize, 0usize), (2, 1)] {
            let orig = lin.weight.value[idx];
            lin.weight.value[idx] = orig + eps;
            let lp = loss(&lin, &x);
            lin.weight.value[idx] = orig - eps;
            let lm = loss(&lin, &x);
            lin.weight.value[idx] = orig;
            assert_abs_diff_eq!(gw[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
        for i in 0..3 {
            let orig = lin.bias.value[i];
            lin.bias.value[i] = orig + eps;
            let lp = loss(&lin, &x);
            lin.bias.value[i] = orig - eps;
            let lm = loss(&lin, &x);
            lin.bias.value[i] = orig;
            assert_abs_diff_eq!(gb[i], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
    }
}
