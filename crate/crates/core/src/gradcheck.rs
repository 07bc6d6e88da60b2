//! Central finite differences for checking analytic gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, floor)`.
///
/// The floor keeps the ratio meaningful when both gradients vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / (norm(a) + norm(b)).max(1e-8)
}

/// Compares tape gradients of a scalar-valued graph against central finite
/// differences, one relative error per input.
///
/// `build` receives the recorded inputs and returns the scalar output. It is
/// evaluated once with differentiable inputs and `2·n` more times with
/// perturbed constant inputs.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let adj = tape.gradients(out)?;

    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("graph failed under perturbation");
        tape.value(out).item()
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let analytic = adj.wrt(&tape, vars[k]);
        let mut values = inputs.to_vec();
        let numeric = finite_difference(
            |x| {
                values[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
                eval(&values)
            },
            input.data(),
            h,
        );
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
