//! Micro-F1 scoring and stratified splitting.

use super::TrainError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Micro-F1 from pooled confusion counts: `2 TP / (2 TP + FP + FN)`.
pub fn micro_f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro-F1 of single-label predictions, pooling counts over all classes.
pub fn micro_f1(preds: &[usize], labels: &[usize]) -> f64 {
    debug_assert_eq!(preds.len(), labels.len());
    let mut tp = 0;
    let mut errors = 0;
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp += 1;
        } else {
            // one false positive for the predicted class and one false
            // negative for the true class
            errors += 1;
        }
    }
    micro_f1_from_counts(tp, errors, errors)
}

/// Assigns each sample to one of `folds` folds, stratified by class: within
/// every class the shuffled members are dealt round-robin so per-class counts
/// differ by at most one across folds. Errors when any fold ends up with a
/// single class.
pub fn stratified_folds(
    labels: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>, TrainError> {
    if folds < 2 || labels.len() < folds {
        return Err(TrainError::Config(format!(
            "cannot make {folds} folds from {} samples",
            labels.len()
        )));
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next_fold = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for idx in members {
            assignment[idx] = next_fold;
            next_fold = (next_fold + 1) % folds;
        }
    }
    for fold in 0..folds {
        let mut seen = std::collections::BTreeSet::new();
        for (i, &f) in assignment.iter().enumerate() {
            if f == fold {
                seen.insert(labels[i]);
            }
        }
        if seen.len() < 2 {
            return Err(TrainError::SingleClassFold { fold });
        }
    }
    Ok(assignment)
}

/// Argmax per row with ties broken toward the smaller class index.
pub fn argmax_rows(probs: &ndarray::Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_predictor_scores_one() {
        let labels = vec![0, 1, 2, 1, 0];
        assert_eq!(micro_f1(&labels, &labels), 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_binary_scores_half() {
        let labels = vec![0, 1, 0, 1, 0, 1];
        let preds = vec![0; 6];
        assert!((micro_f1(&preds, &labels) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_confusion_fixture() {
        // TP = 3, FP = 1, FN = 2 -> F1 = 2*3 / (2*3 + 1 + 2) = 0.6667
        let f1 = micro_f1_from_counts(3, 1, 2);
        assert!((f1 - 2.0 * 3.0 / 9.0).abs() < 1e-12);
        assert!((f1 - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let folds = stratified_folds(&labels, 3, 7).unwrap();
        for fold in 0..3 {
            for class in 0..3 {
                let count = labels
                    .iter()
                    .zip(&folds)
                    .filter(|&(&l, &f)| l == class && f == fold)
                    .count();
                assert!((3..=4).contains(&count), "fold {fold} class {class}: {count}");
            }
        }
        assert_eq!(folds, stratified_folds(&labels, 3, 7).unwrap());
        assert_ne!(folds, stratified_folds(&labels, 3, 8).unwrap());
    }

    #[test]
    fn single_class_fold_is_detected() {
        let labels = vec![0usize; 9];
        assert!(matches!(
            stratified_folds(&labels, 3, 0),
            Err(TrainError::SingleClassFold { .. })
        ));
    }
}
