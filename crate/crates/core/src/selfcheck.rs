//! Finite-difference gradient checks over every differentiable operation,
//! the losses and a complete reduced U-Net.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, grad_check_dd, Dd, GradCheckReport, Graph, Var};
use crate::error::Result;
use crate::losses::{combined_denoise_loss, dice_loss, edge_preservation_loss, l2_loss};
use crate::tensor::{Scalar, Tensor};
use crate::unet::{forward_graph, InputNorm, Model, UNetSpec};

/// Central-difference step used by every check.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for single operations and losses.
pub const OP_TOL: f64 = 1e-5;
/// Tolerance for the end-to-end network check.
pub const NETWORK_TOL: f64 = 1e-4;
/// ReLU inputs this close to the kink are not probed.
const KINK_MARGIN: f64 = 1e-3;
/// Half-width of the random biases used by the network check.
const BIAS_SPREAD: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// `sum(out * weights)` with fixed random weights, so every output element
/// contributes a distinct adjoint.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&mut rng, g.shape(out).0, -1.0, 1.0);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

type Program = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Checks each operation and loss on random inputs drawn from `seed`, with
/// the batch, channel and spatial sizes also drawn from `seed`.
pub fn op_checks(seed: u64, tol: f64) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, options: &[usize]| options[rng.gen_range(0..options.len())];
    let (n, c) = (pick(&mut rng, &[1, 2]), pick(&mut rng, &[1, 3]));
    let (h, w) = (pick(&mut rng, &[4, 6, 8]), pick(&mut rng, &[4, 6, 8]));
    let x = uniform(&mut rng, [n, c, h, w], -1.0, 1.0);
    let x2 = uniform(&mut rng, [n, c, h, w], -1.0, 1.0);
    let pos = uniform(&mut rng, [n, c, h, w], 0.5, 1.5);
    let w3 = uniform(&mut rng, [4, c, 3, 3], -0.5, 0.5);
    let w2 = uniform(&mut rng, [4, c, 2, 2], -0.5, 0.5);
    let bias = uniform(&mut rng, [4, 1, 1, 1], -0.5, 0.5);
    let other = uniform(&mut rng, [n, 2, h, w], -1.0, 1.0);
    let y = uniform(&mut rng, [n, 1, h, w], 0.05, 0.95);
    let target = uniform(&mut rng, [n, 1, h, w], 0.0, 1.0);
    let label = Tensor::from_vec(target.shape(), target.data().iter().map(|&v| (v > 0.6) as u8 as f64).collect())?;

    let s = seed;
    let cases: Vec<(&str, Vec<Tensor<f64>>, Program, Option<usize>)> = vec![
        ("conv2d", vec![x.clone(), w3, bias.clone()], Box::new(move |g, v| {
            let o = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(g, o, s)
        }), None),
        ("conv2d_stride2", vec![x.clone(), w2, bias], Box::new(move |g, v| {
            let o = g.conv2d(v[0], v[1], v[2], 2, 0)?;
            project(g, o, s)
        }), None),
        ("relu", vec![x.clone()], Box::new(move |g, v| {
            let o = g.relu(v[0]);
            project(g, o, s)
        }), Some(0)),
        ("maxpool2", vec![x.clone()], Box::new(move |g, v| {
            let o = g.maxpool2(v[0])?;
            project(g, o, s)
        }), None),
        ("upsample2", vec![x.clone()], Box::new(move |g, v| {
            let o = g.upsample2(v[0]);
            project(g, o, s)
        }), None),
        ("concat", vec![x.clone(), other], Box::new(move |g, v| {
            let o = g.concat_channels(v[0], v[1])?;
            project(g, o, s)
        }), None),
        ("sigmoid", vec![x.clone()], Box::new(move |g, v| {
            let o = g.sigmoid(v[0]);
            project(g, o, s)
        }), None),
        ("add", vec![x.clone(), x2.clone()], Box::new(move |g, v| {
            let o = g.add(v[0], v[1])?;
            project(g, o, s)
        }), None),
        ("sub", vec![x.clone(), x2.clone()], Box::new(move |g, v| {
            let o = g.sub(v[0], v[1])?;
            project(g, o, s)
        }), None),
        ("mul", vec![x.clone(), x2.clone()], Box::new(move |g, v| {
            let o = g.mul(v[0], v[1])?;
            project(g, o, s)
        }), None),
        ("div", vec![x.clone(), pos], Box::new(move |g, v| {
            let o = g.div(v[0], v[1])?;
            project(g, o, s)
        }), None),
        ("square", vec![x.clone()], Box::new(move |g, v| {
            let o = g.square(v[0]);
            project(g, o, s)
        }), None),
        ("scale", vec![x.clone()], Box::new(move |g, v| {
            let o = g.scale(v[0], -1.7);
            project(g, o, s)
        }), None),
        ("add_scalar", vec![x.clone()], Box::new(move |g, v| {
            let o = g.add_scalar(v[0], 0.3);
            project(g, o, s)
        }), None),
        ("sum", vec![x.clone()], Box::new(|g, v| {
            let sq = g.square(v[0]);
            Ok(g.sum(sq))
        }), None),
        ("mean", vec![x], Box::new(|g, v| {
            let sq = g.square(v[0]);
            Ok(g.mean(sq))
        }), None),
        ("dice_loss", vec![y.clone(), label], Box::new(|g, v| Ok(dice_loss(g, v[0], v[1])?.var)), None),
        ("l2_loss", vec![y.clone(), target.clone()], Box::new(|g, v| Ok(l2_loss(g, v[0], v[1])?.var)), None),
        ("edge_preservation_loss", vec![y.clone(), target.clone()], Box::new(|g, v| {
            Ok(edge_preservation_loss(g, v[0], v[1])?.var)
        }), None),
        ("combined_denoise_loss", vec![y, target], Box::new(|g, v| {
            Ok(combined_denoise_loss(g, v[0], v[1], 0.7)?.var)
        }), None),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, inputs, program, kink_input) in cases {
        let skip = move |i: usize, _: usize, v: f64| Some(i) == kink_input && v.abs() < KINK_MARGIN;
        // Labels are not differentiable inputs of the Dice loss.
        let skip_label = |i: usize, _: usize, _: f64| i == 1;
        let exclude: &dyn Fn(usize, usize, f64) -> bool = if name == "dice_loss" { &skip_label } else { &skip };
        let report = grad_check(program, &inputs, FD_STEP, tol, Some(exclude))?;
        out.push(NamedCheck { name: name.into(), report });
    }
    Ok(out)
}

fn unet_dice<T: Scalar>(
    spec: &UNetSpec,
    g: &mut Graph<T>,
    input: &Tensor<T>,
    label: &Tensor<T>,
    params: &[Var],
) -> Result<Var> {
    let x = g.constant(input.clone());
    let l = g.constant(label.clone());
    let y = forward_graph(spec, g, x, params)?;
    Ok(dice_loss(g, y, l)?.var)
}

/// Dice loss of a `base_width` U-Net, configured as for edge training, on
/// one `size`×`size` input, checked with respect to every parameter.
pub fn unet_check(seed: u64, base_width: usize, size: usize, tol: f64) -> Result<NamedCheck> {
    let spec = UNetSpec::new(1, base_width)?.with_input_norm(InputNorm::EDGES);
    spec.check_input(crate::tensor::Shape([1, 1, size, size]))?;
    let mut model = Model::<f64>::build(spec.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    // Zero biases put every position whose inputs are all dead exactly on a
    // ReLU kink, where the one-sided slopes disagree.
    for p in model.params_mut().iter_mut().skip(1).step_by(2) {
        *p = uniform(&mut rng, p.shape().0, -BIAS_SPREAD, BIAS_SPREAD);
    }
    let input = uniform(&mut rng, [1, 1, size, size], 0.0, 1.0);
    let label_raw = uniform(&mut rng, [1, 1, size, size], 0.0, 1.0);
    let label = Tensor::from_vec(label_raw.shape(), label_raw.data().iter().map(|&v| (v > 0.8) as u8 as f64).collect())?;
    let (input_dd, label_dd) = (input.cast::<Dd>(), label.cast::<Dd>());
    let program = |g: &mut Graph<f64>, params: &[Var]| unet_dice(&spec, g, &input, &label, params);
    let program_dd = |g: &mut Graph<Dd>, params: &[Var]| unet_dice(&spec, g, &input_dd, &label_dd, params);
    let report = grad_check_dd(program, program_dd, model.params(), FD_STEP, tol, None)?;
    Ok(NamedCheck { name: format!("unet_width{base_width}_{size}x{size}"), report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_for_one_seed() {
        for c in op_checks(3, OP_TOL).unwrap() {
            assert!(c.passed(), "{}: {:?}", c.name, c.report);
            assert!(c.report.inputs[0].checked > 0, "{}", c.name);
        }
    }

    #[test]
    fn tiny_network_passes() {
        let c = unet_check(1, 2, 8, NETWORK_TOL).unwrap();
        assert!(c.passed(), "{:?}", c.report);
    }
}
