use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients of `f` against central differences.
///
/// `f` receives a fresh tape with one differentiable leaf per entry of
/// `params` and must return a scalar loss. Every coordinate is perturbed by
/// `±eps`; the result is `max |a - n| / max(1, |a|, |n|)` over all
/// coordinates.
pub fn finite_diff_check<F>(params: &[Tensor], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        if !tape.value(loss).get(0, 0).is_finite() {
            return Err(Error::NonFinite("finite_diff_check objective"));
        }
        let grads = tape.backward(loss)?;
        vars.iter().map(|v| grads.get(*v)).collect()
    };

    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).get(0, 0);
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_diff_check objective"));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
