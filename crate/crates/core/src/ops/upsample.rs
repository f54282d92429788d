//! Bilinear ×2 upsampling, half-pixel (align-corners-false) sampling.

use crate::tensor::{Scalar, Shape, Tensor};

/// For each output index along one axis: the two source indices and weights.
fn taps<T: Scalar>(len: usize) -> Vec<(usize, usize, T, T)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = src - i0 as f64;
            (i0, i1, T::from_f64_lossy(1.0 - frac), T::from_f64_lossy(frac))
        })
        .collect()
}

pub fn upsample2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape().0;
    let out_shape = Shape::new(n, c, 2 * h, 2 * w);
    if h == 0 || w == 0 {
        return Tensor::zeros(out_shape);
    }
    let (ty, tx) = (taps::<T>(h), taps::<T>(w));
    let x = input.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in 0..n * c {
        let p = &x[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, wy0, wy1) in &ty {
            for &(x0, x1, wx0, wx1) in &tx {
                let top = wx0 * p[y0 * w + x0] + wx1 * p[y0 * w + x1];
                let bot = wx0 * p[y1 * w + x0] + wx1 * p[y1 * w + x1];
                out.push(wy0 * top + wy1 * bot);
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("shape computed above")
}

/// Exact adjoint of [`upsample2`].
pub fn upsample2_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape.0;
    let mut g = Tensor::zeros(input_shape);
    if h == 0 || w == 0 {
        return g;
    }
    let (ty, tx) = (taps::<T>(h), taps::<T>(w));
    let go = grad_out.data();
    let gd = g.data_mut();
    let ow = 2 * w;
    for plane in 0..n * c {
        let gp = &mut gd[plane * h * w..(plane + 1) * h * w];
        let op = &go[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = op[oy * ow + ox];
                let (top, bot) = (wy0 * v, wy1 * v);
                gp[y0 * w + x0] += wx0 * top;
                gp[y0 * w + x1] += wx1 * top;
                gp[y1 * w + x0] += wx0 * bot;
                gp[y1 * w + x1] += wx1 * bot;
            }
        }
    }
    g
}
