//! Minimal CNN building blocks with hand-written backpropagation.
//!
//! Everything is generic over the scalar type: networks train in `f32`,
//! while gradient-correctness tests instantiate the same code in `f64`
//! for central finite differences. Convolutions are im2col + matmul;
//! batches are processed sample by sample with gradients summed in a
//! fixed order, so results are bit-reproducible.

mod conv;
mod linear;
mod ops;
mod pool;

pub use conv::{Conv2d, Conv3d};
pub use linear::Linear;
pub use ops::{relu, relu_backward, softmax_cross_entropy, softmax_probs};
pub use pool::{
    global_avg_pool2d, global_avg_pool2d_backward, max_pool2d, max_pool2d_backward,
    max_pool3d_spatial, max_pool3d_spatial_backward, max_pool_temporal, max_pool_temporal_backward,
    temporal_max, temporal_max_backward,
};

use ndarray::{Array, Dimension};
use rand::Rng;

/// Scalar type the whole engine is generic over.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        Self::from_f64_prim(v)
    }
    fn from_f64_prim(v: f64) -> Self;
    fn to_f64_prim(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64_prim(v: f64) -> Self {
        v as f32
    }
    fn to_f64_prim(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64_prim(v: f64) -> Self {
        v
    }
    fn to_f64_prim(self) -> f64 {
        self
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// A learnable tensor with its Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar, D: Dimension> {
    pub value: Array<T, D>,
    m: Array<T, D>,
    v: Array<T, D>,
    t: u64,
}

impl<T: Scalar, D: Dimension> Param<T, D> {
    pub fn new(value: Array<T, D>) -> Self {
        let m = Array::zeros(value.raw_dim());
        let v = Array::zeros(value.raw_dim());
        Self { value, m, v, t: 0 }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// One Adam update with the given gradient.
    pub fn adam_step(&mut self, grad: &Array<T, D>, lr: f64, cfg: &AdamConfig) {
        assert_eq!(grad.raw_dim(), self.value.raw_dim());
        self.t += 1;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - cfg.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - cfg.beta2.powi(self.t as i32));
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(cfg.epsilon);
        ndarray::Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// Fan-in scaled uniform initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform<T: Scalar, D: Dimension>(
    dim: D,
    fan_in: usize,
    rng: &mut impl Rng,
) -> Array<T, D> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    Array::from_shape_simple_fn(dim, || T::from_f64(rng.gen::<f64>() * 2.0 * limit - limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p: Param<f64, ndarray::Ix1> = Param::new(Array1::from_elem(3, 5.0));
        let cfg = AdamConfig::default();
        for _ in 0..2000 {
            let grad = p.value.mapv(|w| 2.0 * w);
            p.adam_step(&grad, 0.05, &cfg);
        }
        assert!(p.value.iter().all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn fan_in_init_is_bounded_and_seeded() {
        let mut rng = crate::seed::rng(4);
        let a: Array1<f64> = fan_in_uniform(ndarray::Ix1(100), 25, &mut rng);
        assert!(a.iter().all(|v| v.abs() <= 0.2));
        let mut rng = crate::seed::rng(4);
        let b: Array1<f64> = fan_in_uniform(ndarray::Ix1(100), 25, &mut rng);
        assert_eq!(a, b);
    }
}
