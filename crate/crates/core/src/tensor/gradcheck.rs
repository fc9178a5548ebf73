use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
///
/// `f` receives a fresh tape and the input registered as a leaf; it must
/// return a single-element var.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("grad_check needs eps > 0"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.backward(out)?.wrt(xv);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_parts(x.shape().to_vec(), data));
        let out = f(&mut tape, xv)?;
        tape.value(out).item()
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
