//! Central finite-difference verification of tape gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over parameter tensors of `‖a − n‖ / max(‖a‖, ‖n‖, 1e−12)` (Euclidean norms)
    pub max_rel_error: f64,
    /// index of the tensor attaining `max_rel_error`
    pub worst_tensor: Option<usize>,
    pub per_tensor: Vec<f64>,
    /// Same ratio taken entry by entry. Entries whose true gradient is far
    /// below `ulp(f) / step` are dominated by rounding, so this is diagnostic.
    pub max_entry_rel_error: f64,
    /// `(tensor index, element index)` of the worst entry
    pub worst_entry: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given `step`, over every entry of every parameter.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::Evaluation(format!("objective evaluated to {base}")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.wrt(v).cloned())
        .collect::<Result<_>>()?;

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |e| (t, e)))
        .collect();

    let numeric: Vec<f64> = coords
        .par_iter()
        .map(|&(t, e)| {
            let mut shifted = params.to_vec();
            let x0 = params[t].data()[e];
            shifted[t].data_mut()[e] = x0 + step;
            let plus = eval(&f, &shifted)?;
            shifted[t].data_mut()[e] = x0 - step;
            let minus = eval(&f, &shifted)?;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect::<Result<_>>()?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_tensor: None,
        per_tensor: Vec::with_capacity(params.len()),
        max_entry_rel_error: 0.0,
        worst_entry: None,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: coords.len(),
    };
    let mut sums = vec![(0.0, 0.0, 0.0); params.len()];
    for (&(t, e), &n) in coords.iter().zip(&numeric) {
        let a = analytic[t].data()[e];
        let s = &mut sums[t];
        s.0 += (a - n) * (a - n);
        s.1 += a * a;
        s.2 += n * n;
        let rel = rel_error(a, n);
        if report.worst_entry.is_none() || rel > report.max_entry_rel_error {
            report.max_entry_rel_error = rel;
            report.worst_entry = Some((t, e));
            report.analytic = a;
            report.numeric = n;
        }
    }
    for (t, &(diff, a, n)) in sums.iter().enumerate() {
        let rel = diff.sqrt() / a.sqrt().max(n.sqrt()).max(1e-12);
        if report.worst_tensor.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_tensor = Some(t);
        }
        report.per_tensor.push(rel);
    }
    Ok(report)
}
