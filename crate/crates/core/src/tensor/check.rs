//! Finite-difference verification of the reverse pass.

use super::{Result, Tape, TensorError, TensorId};

/// Input to a gradient check: raw values plus shape.
pub type CheckInput<'a> = (&'a [f64], &'a [usize]);

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns the worst relative error
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
///
/// `f` must rebuild the same computation on whatever tape it is handed;
/// it is re-run with each coordinate perturbed by ±h.
pub fn grad_check<F>(f: F, x: CheckInput<'_>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    grad_check_multi(|tape, ids| f(tape, ids[0]), &[x], h)
}

/// Multi-input form of [`grad_check`]: one leaf per entry of `inputs`, the
/// error is maximized over every coordinate of every input.
pub fn grad_check_multi<F>(f: F, inputs: &[CheckInput<'_>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let eval = |points: &[Vec<f64>]| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let mut ids = Vec::with_capacity(points.len());
        for (vals, &(_, shape)) in points.iter().zip(inputs) {
            ids.push(tape.leaf(vals.clone(), shape)?);
        }
        let out = f(&mut tape, &ids)?;
        if tape.tensor(out).numel() != 1 {
            return Err(TensorError::NonScalar { numel: tape.tensor(out).numel() });
        }
        let v = tape.value(out)[0];
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let mut ids = Vec::with_capacity(inputs.len());
    for &(vals, shape) in inputs {
        ids.push(tape.leaf(vals.to_vec(), shape)?);
    }
    let out = f(&mut tape, &ids)?;
    if !tape.value(out).iter().all(|v| v.is_finite()) {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| tape.grad(id).unwrap().to_vec()).collect();

    let mut points: Vec<Vec<f64>> = inputs.iter().map(|&(vals, _)| vals.to_vec()).collect();
    let mut worst = 0.0f64;
    for (inp, grads) in analytic.iter().enumerate() {
        for coord in 0..grads.len() {
            let orig = points[inp][coord];
            points[inp][coord] = orig + h;
            let plus = eval(&points)?;
            points[inp][coord] = orig - h;
            let minus = eval(&points)?;
            points[inp][coord] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads[coord];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
