//! Training objectives built as graph programs.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::filters::SOBEL_X;
use crate::tensor::{Scalar, Shape, Tensor};

/// Denominator stabilizer of the Dice loss; keeps all-zero inputs finite.
pub const DICE_EPS: f64 = 1e-6;

/// A scalar loss node plus its named sub-terms for logging.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub var: Var,
    pub value: f64,
    /// Unweighted sub-terms, e.g. `("l2", ..)`, `("edge", ..)`.
    pub breakdown: Vec<(&'static str, f64)>,
}

impl LossValue {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn scalar_value<T: Scalar>(graph: &Graph<T>, v: Var) -> f64 {
    graph.value(v).data()[0].to_f64().unwrap_or(f64::NAN)
}

fn ensure_same<T: Scalar>(graph: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (graph.shape(a), graph.shape(b));
    if sa != sb {
        return Err(Error::dim(op, sa, sb));
    }
    Ok(())
}

/// Negated overlap ratio `−Σ y·y′ / (Σ y + Σ y′ + ε)`, summed over the whole
/// batch. Without the conventional factor 2 the range is `(−0.5, 0]`;
/// `conventional` doubles the ratio.
pub fn dice_loss_with<T: Scalar>(graph: &mut Graph<T>, y: Var, label: Var, conventional: bool) -> Result<LossValue> {
    ensure_same(graph, "dice loss", y, label)?;
    let overlap = graph.mul(y, label)?;
    let num = graph.sum(overlap);
    let sy = graph.sum(y);
    let sl = graph.sum(label);
    let den = graph.add(sy, sl)?;
    let den = graph.add_scalar(den, T::from_f64_lossy(DICE_EPS));
    let ratio = graph.div(num, den)?;
    let factor = if conventional { -2.0 } else { -1.0 };
    let var = graph.scale(ratio, T::from_f64_lossy(factor));
    let value = scalar_value(graph, var);
    Ok(LossValue { var, value, breakdown: vec![("dice", value)] })
}

pub fn dice_loss<T: Scalar>(graph: &mut Graph<T>, y: Var, label: Var) -> Result<LossValue> {
    dice_loss_with(graph, y, label, false)
}

/// Mean squared difference.
pub fn l2_loss<T: Scalar>(graph: &mut Graph<T>, y: Var, target: Var) -> Result<LossValue> {
    ensure_same(graph, "l2 loss", y, target)?;
    let d = graph.sub(y, target)?;
    let sq = graph.square(d);
    let var = graph.mean(sq);
    let value = scalar_value(graph, var);
    Ok(LossValue { var, value, breakdown: vec![("l2", value)] })
}

/// Weight tensor `[2, 1, 3, 3]` holding the x and y Sobel kernels.
pub fn sobel_weight<T: Scalar>() -> Tensor<T> {
    let mut data = Vec::with_capacity(18);
    for r in 0..3 {
        for c in 0..3 {
            data.push(T::from_f64_lossy(SOBEL_X[r][c]));
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            data.push(T::from_f64_lossy(SOBEL_X[c][r]));
        }
    }
    Tensor::from_vec([2, 1, 3, 3], data).expect("sobel weight shape")
}

/// Zero-padded Sobel responses of a single-channel batch as a graph node:
/// channel 0 is the x derivative, channel 1 the y derivative.
pub fn sobel_graph<T: Scalar>(graph: &mut Graph<T>, x: Var) -> Result<Var> {
    let shape = graph.shape(x);
    if shape.c() != 1 {
        return Err(Error::dim("sobel (channels)", shape, Shape::new(shape.n(), 1, shape.h(), shape.w())));
    }
    let w = graph.constant(sobel_weight());
    let b = graph.constant(Tensor::zeros([1, 2, 1, 1]));
    graph.conv2d(x, w, b, 1, 1)
}

/// Mean squared difference of Sobel-x responses plus the same for Sobel-y.
pub fn edge_preservation_loss<T: Scalar>(graph: &mut Graph<T>, denoised: Var, clean: Var) -> Result<LossValue> {
    ensure_same(graph, "edge preservation loss", denoised, clean)?;
    let gd = sobel_graph(graph, denoised)?;
    let gc = sobel_graph(graph, clean)?;
    let d = graph.sub(gd, gc)?;
    let sq = graph.square(d);
    // Both response planes have the same size, so twice the joint mean is
    // the sum of the per-direction means.
    let m = graph.mean(sq);
    let var = graph.scale(m, T::from_f64_lossy(2.0));
    let value = scalar_value(graph, var);
    Ok(LossValue { var, value, breakdown: vec![("edge", value)] })
}

/// `l2 + λ_edge · edge`. With `λ_edge = 0` the edge term is not built and
/// the result is exactly the L2 loss.
pub fn combined_denoise_loss<T: Scalar>(
    graph: &mut Graph<T>,
    denoised: Var,
    clean: Var,
    lambda_edge: f64,
) -> Result<LossValue> {
    if !(lambda_edge >= 0.0) || !lambda_edge.is_finite() {
        return Err(Error::Contract(format!("lambda_edge must be a finite value >= 0, got {lambda_edge}")));
    }
    let l2 = l2_loss(graph, denoised, clean)?;
    if lambda_edge == 0.0 {
        return Ok(LossValue { var: l2.var, value: l2.value, breakdown: vec![("l2", l2.value), ("edge", 0.0)] });
    }
    let edge = edge_preservation_loss(graph, denoised, clean)?;
    let weighted = graph.scale(edge.var, T::from_f64_lossy(lambda_edge));
    let var = graph.add(l2.var, weighted)?;
    let value = scalar_value(graph, var);
    Ok(LossValue { var, value, breakdown: vec![("l2", l2.value), ("edge", edge.value)] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::filters::sobel;
    use crate::image::GrayImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn dice_of(y: &Tensor<f64>, l: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let (a, b) = (g.constant(y.clone()), g.constant(l.clone()));
        dice_loss(&mut g, a, b).unwrap().value
    }

    #[test]
    fn dice_worked_example() {
        let v = dice_of(&t([1, 1, 1, 4], &[0.5, 0.5, 1.0, 0.0]), &t([1, 1, 1, 4], &[1.0, 0.0, 1.0, 0.0]));
        assert!((v - (-1.5 / (4.0 + DICE_EPS))).abs() < 1e-15);
        assert!((v + 0.375).abs() < 1e-6);
    }

    #[test]
    fn dice_perfect_and_empty() {
        let ones = Tensor::<f64>::ones([1, 1, 3, 5]);
        assert!((dice_of(&ones, &ones) + 0.5).abs() < 1e-6);
        let zeros = Tensor::<f64>::zeros([1, 1, 3, 5]);
        let v = dice_of(&zeros, &zeros);
        assert!(v.is_finite() && v.abs() < 1e-12);
    }

    #[test]
    fn dice_conventional_doubles() {
        let (y, l) = (random([1, 1, 4, 4], 1), random([1, 1, 4, 4], 2).cast::<f64>());
        let l = Tensor::from_vec(l.shape(), l.data().iter().map(|&v| (v > 0.5) as u8 as f64).collect()).unwrap();
        let mut g = Graph::new();
        let (a, b) = (g.constant(y), g.constant(l));
        let plain = dice_loss(&mut g, a, b).unwrap().value;
        let conv = dice_loss_with(&mut g, a, b, true).unwrap().value;
        assert!((conv - 2.0 * plain).abs() < 1e-15);
    }

    #[test]
    fn dice_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let b = g.constant(Tensor::zeros([1, 1, 2, 3]));
        assert!(matches!(dice_loss(&mut g, a, b), Err(Error::Dimension { .. })));
        assert!(matches!(l2_loss(&mut g, a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn l2_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full([1, 1, 3, 3], 0.75));
        let b = g.constant(Tensor::full([1, 1, 3, 3], 0.25));
        assert_eq!(l2_loss(&mut g, a, b).unwrap().value, 0.25);
        assert_eq!(l2_loss(&mut g, a, a).unwrap().value, 0.0);
    }

    #[test]
    fn l2_gradient_is_scaled_difference() {
        let (y, tg) = (random([1, 1, 4, 5], 3), random([1, 1, 4, 5], 4));
        let mut g = Graph::new();
        let a = g.param(y.clone());
        let b = g.constant(tg.clone());
        let loss = l2_loss(&mut g, a, b).unwrap();
        g.backward(loss.var).unwrap();
        let grad = g.grad(a).unwrap();
        for ((gv, yv), tv) in grad.data().iter().zip(y.data()).zip(tg.data()) {
            assert!((gv - 2.0 * (yv - tv) / 20.0).abs() < 1e-15);
        }
    }

    #[test]
    fn losses_pass_gradient_checks() {
        for seed in 0..3 {
            let y = random([2, 1, 5, 6], seed);
            let raw = random([2, 1, 5, 6], seed + 100);
            let label = Tensor::from_vec(raw.shape(), raw.data().iter().map(|&v| (v > 0.6) as u8 as f64).collect()).unwrap();
            let r = grad_check(
                |g, v| Ok(dice_loss(g, v[0], v[1])?.var),
                &[y.clone(), label.clone()],
                1e-5,
                1e-5,
                Some(&|i, _, _| i == 1),
            )
            .unwrap();
            assert!(r.passed(), "dice {r:?}");
            let r = grad_check(|g, v| Ok(l2_loss(g, v[0], v[1])?.var), &[y.clone(), raw.clone()], 1e-5, 1e-5, None).unwrap();
            assert!(r.passed(), "l2 {r:?}");
            let r = grad_check(
                |g, v| Ok(edge_preservation_loss(g, v[0], v[1])?.var),
                &[y.clone(), raw.clone()],
                1e-5,
                1e-5,
                None,
            )
            .unwrap();
            assert!(r.passed(), "edge {r:?}");
            let r = grad_check(
                |g, v| Ok(combined_denoise_loss(g, v[0], v[1], 0.7)?.var),
                &[y, raw],
                1e-5,
                1e-5,
                None,
            )
            .unwrap();
            assert!(r.passed(), "combined {r:?}");
        }
    }

    #[test]
    fn edge_loss_zero_cases_and_shift_invariance() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full([1, 1, 6, 6], 0.2));
        let b = g.constant(Tensor::full([1, 1, 6, 6], 0.9));
        assert_eq!(edge_preservation_loss(&mut g, a, a).unwrap().value, 0.0);
        // Different constants: responses agree away from the zero-padded border.
        let (sa, sb) = (sobel_graph(&mut g, a).unwrap(), sobel_graph(&mut g, b).unwrap());
        for ch in 0..2 {
            for y in 1..5 {
                for x in 1..5 {
                    assert!(g.value(sa).at(0, ch, y, x).abs() < 1e-15);
                    assert!(g.value(sb).at(0, ch, y, x).abs() < 1e-15);
                }
            }
        }
        let (x, y) = (random([1, 1, 7, 7], 8), random([1, 1, 7, 7], 9));
        let shift = |t: &Tensor<f64>| Tensor::from_vec(t.shape(), t.data().iter().map(|v| v + 0.3).collect()).unwrap();
        let (xs, ys) = (shift(&x), shift(&y));
        let (vx, vy, vxs, vys) = (g.constant(x), g.constant(y), g.constant(xs), g.constant(ys));
        let base = edge_preservation_loss(&mut g, vx, vy).unwrap().value;
        let moved = edge_preservation_loss(&mut g, vxs, vys).unwrap().value;
        assert!((base - moved).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn edge_loss_rejects_multichannel() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([1, 2, 4, 4]));
        assert!(matches!(edge_preservation_loss(&mut g, a, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn graph_sobel_matches_filter_sobel() {
        let img = GrayImage::from_tensor(&random([1, 1, 9, 11], 5), 0).unwrap();
        let (gx, gy) = sobel(&img).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(img.to_tensor());
        let s = sobel_graph(&mut g, x).unwrap();
        let out = g.value(s);
        for y in 0..9 {
            for x in 0..11 {
                assert!((out.at(0, 0, y, x) - gx.get(y, x)).abs() < 1e-6);
                assert!((out.at(0, 1, y, x) - gy.get(y, x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn combined_loss_terms() {
        let (d, c) = (random([1, 1, 8, 8], 11), random([1, 1, 8, 8], 12));
        let mut g = Graph::<f64>::new();
        let (a, b) = (g.constant(d), g.constant(c));
        let l2 = l2_loss(&mut g, a, b).unwrap().value;
        let edge = edge_preservation_loss(&mut g, a, b).unwrap().value;
        let zero = combined_denoise_loss(&mut g, a, b, 0.0).unwrap();
        assert_eq!(zero.value, l2);
        let one = combined_denoise_loss(&mut g, a, b, 1.0).unwrap();
        assert!((one.value - (l2 + edge)).abs() <= 1e-6 * one.value);
        assert_eq!(one.term("l2"), Some(l2));
        assert_eq!(one.term("edge"), Some(edge));
        assert_eq!(combined_denoise_loss(&mut g, a, a, 1.0).unwrap().value, 0.0);
        assert!(matches!(combined_denoise_loss(&mut g, a, b, -0.1), Err(Error::Contract(_))));
    }
}
