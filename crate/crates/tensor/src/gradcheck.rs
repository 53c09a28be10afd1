//! Central finite-difference verification of tape gradients.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Where the largest disagreement between the analytic and numeric
/// gradients was found.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn eval<E, F>(f: &F, inputs: &[Tensor<E>]) -> Result<f64>
where
    E: Element,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, E>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value().item()?;
    Ok(v.as_f64())
}

/// Compares the reverse-mode gradient of scalar `f` with central
/// differences `(f(x+eps) - f(x-eps)) / 2eps` at every coordinate of every
/// input. Relative error is `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn fd_check_report<E, F>(f: F, inputs: &[Tensor<E>], eps: E) -> Result<FdReport>
where
    E: Element,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    let eps_f = eps.as_f64();
    if !(eps_f > 0.0 && eps_f <= 0.1) {
        return Err(TensorError::InvalidArgument(format!("eps {eps_f} outside (0, 0.1]")));
    }
    let first = eval(&f, inputs)?;
    let second = eval(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let tape = Tape::new();
    let vars: Vec<Var<'_, E>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = FdReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor<E>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("leaf gradient");
        for i in 0..inputs[which].numel() {
            let x = inputs[which].data()[i];
            let (up, down) = (x + eps, x - eps);
            probe[which].data_mut()[i] = up;
            let fu = eval(&f, &probe)?;
            probe[which].data_mut()[i] = down;
            let fd = eval(&f, &probe)?;
            probe[which].data_mut()[i] = x;
            let numeric = (fu - fd) / (up.as_f64() - down.as_f64());
            let a = analytic.data()[i].as_f64();
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report = FdReport {
                    max_rel_error: rel,
                    input: which,
                    index: i,
                    analytic: a,
                    numeric,
                    coordinates: report.coordinates,
                };
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn fd_check<E, F>(f: F, inputs: &[Tensor<E>], eps: E) -> Result<f64>
where
    E: Element,
    F: for<'t> Fn(&'t Tape<E>, &[Var<'t, E>]) -> Result<Var<'t, E>>,
{
    fd_check_report(f, inputs, eps).map(|r| r.max_rel_error)
}
