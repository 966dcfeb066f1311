//! Training objectives: subgraph contrast and classification.

use super::TrainError;
use crate::autodiff::{AutodiffError, Tape, Var};
use ndarray::Array2;
use std::rc::Rc;

/// Contrastive loss over two views of the same N subgraphs (rows matched by
/// position). Cosine similarities are formed by row normalization followed by
/// a cross product; the per-anchor denominator runs over the other rows of
/// the second view only, so the positive pair appears in the numerator alone:
///
/// `L = mean_i -log( exp(cos(z_i^1, z_i^2)/tau) / sum_{j != i} exp(cos(z_i^1, z_j^2)/tau) )`
///
/// A zero row makes the cosine undefined and is an error.
pub fn contrastive_loss(tape: &Tape, z1: Var, z2: Var, tau: f64) -> Result<Var, TrainError> {
    let z1n = tape.l2_normalize_rows(z1).map_err(zero_vector)?;
    let z2n = tape.l2_normalize_rows(z2).map_err(zero_vector)?;
    let sim = tape.matmul(z1n, tape.transpose(z2n)?)?;
    Ok(tape.info_nce_excl(sim, tau)?)
}

/// Symmetric variant averaging both anchor directions; off by default.
pub fn contrastive_loss_symmetric(
    tape: &Tape,
    z1: Var,
    z2: Var,
    tau: f64,
) -> Result<Var, TrainError> {
    let forward = contrastive_loss(tape, z1, z2, tau)?;
    let backward = contrastive_loss(tape, z2, z1, tau)?;
    Ok(tape.scale(tape.add(forward, backward)?, 0.5)?)
}

fn zero_vector(e: AutodiffError) -> TrainError {
    match e {
        AutodiffError::ZeroVector { row } => TrainError::ZeroVector { row },
        other => TrainError::Autodiff(other),
    }
}

/// Mean negative log probability of the true class, probabilities clamped at
/// 1e-12 before the log.
pub fn prediction_loss(
    tape: &Tape,
    probs: Var,
    labels: &Rc<Vec<usize>>,
) -> Result<Var, TrainError> {
    Ok(tape.nll_loss(probs, Rc::clone(labels))?)
}

/// Eager contrastive loss for plain matrices.
pub fn contrastive_loss_value(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    tau: f64,
) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let a = tape.leaf(z1.clone())?;
    let b = tape.leaf(z2.clone())?;
    let loss = contrastive_loss(&tape, a, b, tau)?;
    Ok(tape.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Double-loop reference for the contrastive objective.
    fn reference_loop(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> f64 {
        let n = z1.nrows();
        let cos = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        let mut total = 0.0;
        for i in 0..n {
            let pos = (cos(z1.row(i), z2.row(i)) / tau).exp();
            let mut denom = 0.0;
            for j in 0..n {
                if j != i {
                    denom += (cos(z1.row(i), z2.row(j)) / tau).exp();
                }
            }
            total += -(pos / denom).ln();
        }
        total / n as f64
    }

    #[test]
    fn two_orthogonal_identical_views_evaluate_to_minus_five() {
        // Verified against the reference loop before being asserted: with
        // tau = 0.2, matching unit rows and orthogonal cross terms give
        // -log(e^5 / e^0) = -5 per anchor.
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let reference = reference_loop(&z, &z, 0.2);
        assert_abs_diff_eq!(reference, -5.0, epsilon = 1e-12);
        let got = contrastive_loss_value(&z, &z, 0.2).unwrap();
        assert_abs_diff_eq!(got, reference, epsilon = 1e-12);
    }

    #[test]
    fn cosine_makes_loss_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut z1 = Array2::zeros((4, 3));
        let mut z2 = Array2::zeros((4, 3));
        for v in z1.iter_mut().chain(z2.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let base = contrastive_loss_value(&z1, &z2, 0.2).unwrap();
        let mut scaled = z1.clone();
        for c in 0..3 {
            scaled[[2, c]] *= 37.5;
        }
        let got = contrastive_loss_value(&scaled, &z2, 0.2).unwrap();
        assert_abs_diff_eq!(got, base, epsilon = 1e-12);
    }

    #[test]
    fn matches_double_loop_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2usize, 3, 4, 8] {
            let mut z1 = Array2::zeros((n, 5));
            let mut z2 = Array2::zeros((n, 5));
            for v in z1.iter_mut().chain(z2.iter_mut()) {
                *v = rng.random_range(-2.0..2.0);
            }
            let got = contrastive_loss_value(&z1, &z2, 0.2).unwrap();
            let want = reference_loop(&z1, &z2, 0.2);
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn raising_positive_similarity_strictly_lowers_the_loss() {
        // Anchor 0's positive alignment sweeps from orthogonal to parallel
        // while every negative stays fixed.
        let mut last = f64::INFINITY;
        for step in 0..5 {
            let angle = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 4.0);
            let z1 = array![[1.0, 0.0], [0.3, 0.9]];
            let z2 = array![[angle.cos(), angle.sin()], [0.3, 0.9]];
            let loss = contrastive_loss_value(&z1, &z2, 0.2).unwrap();
            assert!(loss < last, "loss {loss} not below {last}");
            last = loss;
        }
    }

    #[test]
    fn zero_row_is_reported() {
        let z1 = array![[1.0, 0.0], [0.0, 0.0]];
        let z2 = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            contrastive_loss_value(&z1, &z2, 0.2),
            Err(TrainError::ZeroVector { row: 1 })
        ));
    }

    #[test]
    fn symmetric_variant_averages_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut z1 = Array2::zeros((3, 4));
        let mut z2 = Array2::zeros((3, 4));
        for v in z1.iter_mut().chain(z2.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let tape = Tape::new();
        let a = tape.leaf(z1.clone()).unwrap();
        let b = tape.leaf(z2.clone()).unwrap();
        let sym = contrastive_loss_symmetric(&tape, a, b, 0.2).unwrap();
        let fwd = reference_loop(&z1, &z2, 0.2);
        let bwd = reference_loop(&z2, &z1, 0.2);
        assert_abs_diff_eq!(tape.scalar_value(sym), 0.5 * (fwd + bwd), epsilon = 1e-10);
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let tape = Tape::new();
        let probs = tape.leaf(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let labels = Rc::new(vec![0usize, 1]);
        let loss = prediction_loss(&tape, probs, &labels).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn uniform_binary_predictions_cost_ln_two() {
        let tape = Tape::new();
        let probs = tape.leaf(Array2::from_elem((4, 2), 0.5)).unwrap();
        let labels = Rc::new(vec![0usize, 1, 0, 1]);
        let loss = prediction_loss(&tape, probs, &labels).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(loss), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn prediction_loss_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut probs: Array2<f64> = Array2::zeros((5, 3));
        for mut row in probs.rows_mut() {
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.05..1.0);
                total += *v;
            }
            row.mapv_inplace(|v| v / total);
        }
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
        let mut expected: f64 = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            expected -= probs[[r, y]].ln();
        }
        expected /= 5.0;
        let tape = Tape::new();
        let p = tape.leaf(probs).unwrap();
        let loss = prediction_loss(&tape, p, &Rc::new(labels)).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(loss), expected, epsilon = 1e-12);
    }
}
