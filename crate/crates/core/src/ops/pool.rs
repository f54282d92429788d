use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 2×2 stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index that produced it. Ties go to the first
/// element in row-major block order.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.shape().0;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Geometry(format!(
            "maxpool2 needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(Shape::new(n, c, oh, ow), out)?, argmax))
}

pub fn maxpool2_backward<T: Scalar>(input_shape: Shape, argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&src, &v) in argmax.iter().zip(grad_out.data()) {
        gd[src] += v;
    }
    g
}
