//! Compact convolutional network for SSVEP windows, with hand-derived
//! gradients, Adam and the depthwise max-norm constraint.
//!
//! Everything is generic over [`Real`] so gradients can be checked in `f64`
//! while training runs in `f32`.

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

mod adam;
mod block1;
mod layers;
mod model;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{
    avgpool_time, avgpool_time_backward, batchnorm, batchnorm_backward, conv2d_temporal_same,
    conv2d_temporal_same_backward, cross_entropy, cross_entropy_grad, dense_softmax,
    dense_softmax_backward, depthwise_conv_spatial, depthwise_conv_spatial_backward, dropout,
    dropout_backward, elu, elu_backward, separable_conv, separable_conv_backward, softmax_rows,
    BatchNorm, BnCache, Mode,
};
pub use model::{
    CompactCnn, ForwardCache, Gradients, ModelConfig, ModelParams, ParamCounts, Prediction,
    TRAINABLE_NAMES,
};
pub use tensor::Tensor4;
pub use train::{train, train_with, TrainConfig, TrainOutcome, TrainSet};

/// Floating-point element type of the network.
pub trait Real:
    Float
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
