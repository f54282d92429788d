//! Tensor kernels without graph bookkeeping.

pub mod conv;
pub(crate) mod gemm;
pub mod pool;
pub mod upsample;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use conv::{conv2d, conv2d_backward, ConvGeometry, ConvGrads};
pub use pool::{maxpool2, maxpool2_backward};
pub use upsample::{upsample2, upsample2_backward};

/// Channel-wise concatenation, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [an, ac, ah, aw] = a.shape().0;
    let [bn, bc, bh, bw] = b.shape().0;
    if (an, ah, aw) != (bn, bh, bw) {
        return Err(Error::dim("concat_channels", a.shape(), b.shape()));
    }
    let (pa, pb) = (ac * ah * aw, bc * bh * bw);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..an {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::from_vec(Shape::new(an, ac + bc, ah, aw), data)
}

/// Splits a concatenated gradient back into the two operand gradients.
pub fn split_channels<T: Scalar>(g: &Tensor<T>, a_channels: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = g.shape().0;
    let bc = c - a_channels;
    let (pa, pb) = (a_channels * h * w, bc * h * w);
    let mut ga = Vec::with_capacity(n * pa);
    let mut gb = Vec::with_capacity(n * pb);
    for chunk in g.data().chunks_exact((pa + pb).max(1)).take(n) {
        ga.extend_from_slice(&chunk[..pa]);
        gb.extend_from_slice(&chunk[pa..]);
    }
    (
        Tensor::from_vec(Shape::new(n, a_channels, h, w), ga).expect("split a"),
        Tensor::from_vec(Shape::new(n, bc, h, w), gb).expect("split b"),
    )
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Makes subnormal floats flush to zero on the calling thread (x86-64 with
/// SSE). Training drives Adam's second moments and some activations
/// into the subnormal range, where arithmetic is slower by two orders of
/// magnitude; results differ from IEEE only below `f32::MIN_POSITIVE`.
pub fn flush_subnormals() {
    #[cfg(target_arch = "x86_64")]
    #[allow(deprecated)]
    // SAFETY: only sets the FTZ and DAZ bits of MXCSR for this thread.
    unsafe {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrip() {
        let a = Tensor::<f64>::full([2, 3, 2, 2], 1.0);
        let b = Tensor::<f64>::full([2, 1, 2, 2], 2.0);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 4, 2, 2));
        assert_eq!(cat.at(1, 3, 0, 0), 2.0);
        assert_eq!(cat.at(1, 2, 1, 1), 1.0);
        let (ga, gb) = split_channels(&cat, 3);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let a = Tensor::<f64>::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let empty = Tensor::<f64>::zeros([1, 0, 1, 2]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros([1, 1, 2, 2])).is_err());
    }

    #[test]
    fn sigmoid_saturates_cleanly() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(30.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-30.0f64).abs() < 1e-12);
        assert!(sigmoid(-800.0f64).is_finite());
    }
}
