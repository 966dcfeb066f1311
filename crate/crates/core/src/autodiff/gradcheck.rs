//! Central finite-difference gradient verification.
//!
//! The checker re-runs a user-supplied graph builder from scratch for every
//! perturbed input entry, so it exercises only forward evaluations and stays
//! independent of the backward implementation it verifies.

use super::{AutodiffError, Tape, Var};
use ndarray::Array2;

/// Largest relative error between analytic and numeric gradients.
///
/// `build` must construct the graph on the given tape from leaves created in
/// the order of `inputs` and return a 1x1 loss. Relative error uses
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn max_relative_error<F>(
    build: F,
    inputs: &[Array2<f64>],
    eps: f64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |arrays: &[Array2<f64>]| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let vars: Vec<Var> = arrays
            .iter()
            .map(|a| tape.leaf(a.clone()))
            .collect::<Result<_, _>>()?;
        let loss = build(&tape, &vars)?;
        Ok(tape.scalar_value(loss))
    };

    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|a| tape.leaf(a.clone()))
        .collect::<Result<_, _>>()?;
    let loss = build(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.dim());
        let (rows, cols) = input.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work[k][[r, c]];
                work[k][[r, c]] = orig + eps;
                let plus = eval(&work)?;
                work[k][[r, c]] = orig - eps;
                let minus = eval(&work)?;
                work[k][[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let err = (analytic[[r, c]] - numeric).abs() / numeric.abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}
