//! Central finite-difference verification of analytic gradients.

use crate::autodiff::dd::Dd;
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Per-input result of a gradient check.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub index: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Elements whose difference quotient was recomputed in double-double.
    pub refined: usize,
    /// Flat position of the worst element.
    pub worst: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|c| c.max_rel_error < self.tol)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Elements within this fraction of the tolerance are also refined, so the
/// reported worst case is not f64 noise sitting just under the limit.
const REFINE_FRACTION: f64 = 0.1;

type Refine<'a> = &'a dyn Fn(&[Tensor<f64>], usize, usize, f64) -> Result<f64>;

/// Compares the analytic gradient of the scalar program `f` with central
/// differences for every element of every input.
///
/// `exclude(input, element, value)` may skip points where `f` is not
/// differentiable (e.g. ReLU kinks).
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    exclude: Option<&dyn Fn(usize, usize, f64) -> bool>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check(&f, inputs, step, tol, exclude, None)
}

/// Like [`grad_check`], but elements that come near `tol` in f64 get their
/// difference quotient recomputed by `f_dd` in double-double arithmetic.
///
/// Deep programs have gradient entries so small that the f64 quotient is
/// dominated by roundoff in the loss. The analytic side is still the f64
/// gradient from `f`.
pub fn grad_check_dd<F, G>(
    f: F,
    f_dd: G,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    exclude: Option<&dyn Fn(usize, usize, f64) -> bool>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    G: Fn(&mut Graph<Dd>, &[Var]) -> Result<Var>,
{
    let refine = |values: &[Tensor<f64>], i: usize, e: usize, h: f64| -> Result<f64> {
        let mut probe: Vec<Tensor<Dd>> = values.iter().map(|t| t.cast()).collect();
        let x0 = probe[i].data()[e];
        let h = Dd::from_f64(h);
        let mut evaluate = |x: Dd| -> Result<Dd> {
            probe[i].data_mut()[e] = x;
            let mut g = Graph::new();
            let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
            let out = f_dd(&mut g, &vars)?;
            g.value(out).item()
        };
        let plus = evaluate(x0 + h)?;
        let minus = evaluate(x0 - h)?;
        Ok(((plus - minus) / (h + h)).hi())
    };
    check(&f, inputs, step, tol, exclude, Some(&refine))
}

fn check(
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    exclude: Option<&dyn Fn(usize, usize, f64) -> bool>,
    refine: Option<Refine<'_>>,
) -> Result<GradCheckReport> {
    let evaluate = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { step, tol, inputs: Vec::new() };
    for (i, input) in inputs.iter().enumerate() {
        let mut check = InputCheck { index: i, checked: 0, max_rel_error: 0.0, refined: 0, worst: None };
        for e in 0..input.numel() {
            let x0 = input.data()[e];
            if exclude.is_some_and(|skip| skip(i, e, x0)) {
                continue;
            }
            probe[i].data_mut()[e] = x0 + step;
            let plus = evaluate(&probe)?;
            probe[i].data_mut()[e] = x0 - step;
            let minus = evaluate(&probe)?;
            probe[i].data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[e];
            let mut err = relative_error(a, numeric);
            if let (true, Some(refine)) = (err >= REFINE_FRACTION * tol, refine) {
                err = relative_error(a, refine(&probe, i, e, step)?);
                check.refined += 1;
            }
            check.checked += 1;
            if err > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = check.max_rel_error.max(err);
                check.worst = Some(e);
            }
        }
        report.inputs.push(check);
    }
    Ok(report)
}
