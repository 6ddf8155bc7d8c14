//! Central-difference verification of tape gradients.

use super::rng::RngStream;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares analytic gradients of `f` against central differences for every
/// coordinate of every tensor in `inputs`.
///
/// A non-scalar output is reduced with fixed pseudo-random weights so every
/// output coordinate contributes. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(&t.detached().with_requires_grad(want_grad)))
            .collect();
        let out = f(&mut tape, &vars)?;
        let out = project(&mut tape, out)?;
        let value = tape.value(out).data()[0];
        let grads = if want_grad {
            let g = tape.backward(out)?;
            vars.iter()
                .zip(values)
                .map(|(v, t)| g.get_or_zeros(*v, t.numel()))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (base, analytic) = eval(inputs, true)?;
    let (again, _) = eval(inputs, false)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(
            "function under gradient check is not deterministic".into(),
        ));
    }

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for coord in 0..inputs[which].numel() {
            let original = inputs[which].data()[coord];
            probe[which].data_mut()[coord] = original + epsilon;
            let (plus, _) = eval(&probe, false)?;
            probe[which].data_mut()[coord] = original - epsilon;
            let (minus, _) = eval(&probe, false)?;
            probe[which].data_mut()[coord] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad[coord];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), epsilon)
}

fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let value = tape.value(out);
    if value.is_scalar() {
        return Ok(out);
    }
    let mut rng = RngStream::new(0x5eed);
    let weights: Vec<f64> = (0..value.numel()).map(|_| rng.symmetric(1.0) + 0.25).collect();
    let w = tape.constant(Tensor::new(value.shape(), weights)?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}
