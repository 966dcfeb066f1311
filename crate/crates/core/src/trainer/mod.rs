//! Joint optimization of subgraph classification and subgraph contrast.
//!
//! Each training batch generates a correlated view pair per subgraph, encodes
//! both views, and minimizes `L = L_pred + lambda * L_self` where the
//! classification term averages the cross entropy of both views (they carry
//! the target's label as a pseudo-label) and the contrastive term pulls the
//! paired projections together against in-batch negatives. Validation
//! micro-F1 drives early stopping; the best-validation parameters are
//! returned. With `lambda = 0` and identity views this reduces to plain
//! supervised training of the encoder.

mod config;
mod eval;
mod loss;

pub use config::TrainConfig;
pub use eval::{argmax_rows, micro_f1, micro_f1_from_counts, stratified_folds};
pub use loss::{
    contrastive_loss, contrastive_loss_symmetric, contrastive_loss_value, prediction_loss,
};

use crate::augment::{make_view_pair, AugmentError, AugmentOp};
use crate::autodiff::{AutodiffError, Optimizer, Tape};
use crate::graph::LwAig;
use crate::hgate::{HgateConfig, HgateError, HgateModel, SubgraphBatch};
use crate::sampler::{AccountSubgraph, Dataset, SamplingStrategy};
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("fold {fold} contains a single class")]
    SingleClassFold { fold: usize },
    #[error("projection row {row} is a zero vector, cosine undefined")]
    ZeroVector { row: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Hgate(#[from] HgateError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("bad configuration: {0}")]
    Config(String),
}

/// Per-epoch training record, serialized as one JSONL line by the CLI.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_pred: f64,
    pub l_self: f64,
    pub val_f1: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: HgateModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

fn is_nonfinite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Autodiff(AutodiffError::NonFiniteValue { .. })
            | TrainError::Hgate(HgateError::Autodiff(AutodiffError::NonFiniteValue { .. }))
    )
}

/// Micro-F1 of a fixed model over a subgraph list.
pub fn evaluate_model(
    model: &HgateModel,
    subgraphs: &[&AccountSubgraph],
) -> Result<(Vec<usize>, f64), TrainError> {
    let mut preds = Vec::with_capacity(subgraphs.len());
    let mut labels = Vec::with_capacity(subgraphs.len());
    for chunk in subgraphs.chunks(256) {
        let probs = model.predict_eval(chunk)?;
        preds.extend(argmax_rows(&probs));
        labels.extend(chunk.iter().map(|s| s.label as usize));
    }
    let f1 = micro_f1(&preds, &labels);
    Ok((preds, f1))
}

struct StepOutcome {
    l_pred: f64,
    l_self: f64,
}

fn train_step(
    model: &mut HgateModel,
    optimizer: &mut Optimizer,
    batch_sgs: &[&AccountSubgraph],
    ops: &(AugmentOp, AugmentOp),
    graph: Option<&LwAig>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, TrainError> {
    let mut views1 = Vec::with_capacity(batch_sgs.len());
    let mut views2 = Vec::with_capacity(batch_sgs.len());
    for sg in batch_sgs {
        let (v1, v2) = make_view_pair(sg, &ops.0, &ops.1, rng.next_u64(), graph)?;
        views1.push(v1);
        views2.push(v2);
    }
    let refs1: Vec<&AccountSubgraph> = views1.iter().collect();
    let refs2: Vec<&AccountSubgraph> = views2.iter().collect();
    let batch1 = SubgraphBatch::build(&refs1, &model.scaler)?;
    let batch2 = SubgraphBatch::build(&refs2, &model.scaler)?;
    let labels = Rc::new(batch1.labels.clone());

    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let g1 = model.encode(&tape, &bound, &batch1, true, rng)?;
    let g2 = model.encode(&tape, &bound, &batch2, true, rng)?;

    let l_pred = if cfg.classify_augmented {
        let p1 = model.predict_probs(&tape, &bound, g1)?;
        let p2 = model.predict_probs(&tape, &bound, g2)?;
        let s = tape.add(
            prediction_loss(&tape, p1, &labels)?,
            prediction_loss(&tape, p2, &labels)?,
        )?;
        tape.scale(s, 0.5)?
    } else {
        let raw_batch = SubgraphBatch::build(batch_sgs, &model.scaler)?;
        let g_raw = model.encode(&tape, &bound, &raw_batch, true, rng)?;
        let p_raw = model.predict_probs(&tape, &bound, g_raw)?;
        prediction_loss(&tape, p_raw, &Rc::new(raw_batch.labels.clone()))?
    };

    // With lambda = 0 the contrastive branch contributes nothing and is
    // skipped, which keeps pure supervised runs immune to degenerate
    // projections; the rng stream is unaffected either way.
    let (loss, l_self_value) = if cfg.lambda != 0.0 {
        let z1 = model.project(&tape, &bound, g1)?;
        let z2 = model.project(&tape, &bound, g2)?;
        let l_self = if cfg.symmetric_contrast {
            contrastive_loss_symmetric(&tape, z1, z2, cfg.tau)?
        } else {
            contrastive_loss(&tape, z1, z2, cfg.tau)?
        };
        let total = tape.add(l_pred, tape.scale(l_self, cfg.lambda)?)?;
        (total, tape.scalar_value(l_self))
    } else {
        (l_pred, 0.0)
    };

    let grads = tape.backward(loss)?;
    let grad_arrays = model.param_grads(&bound, &grads);
    let mut named = model.params.named_mut();
    let mut param_refs: Vec<&mut ndarray::Array2<f64>> =
        named.iter_mut().map(|(_, t)| &mut **t).collect();
    optimizer.step(&mut param_refs, &grad_arrays)?;

    Ok(StepOutcome {
        l_pred: tape.scalar_value(l_pred),
        l_self: l_self_value,
    })
}

/// Trains on `train_set` with early stopping on `val_set` micro-F1 and
/// returns the best-validation checkpoint plus the loss history.
///
/// `dataset_strategy` seeds the resample augmentation; `graph` is only needed
/// when the augmentation pair resamples.
pub fn train(
    train_set: &[&AccountSubgraph],
    val_set: &[&AccountSubgraph],
    n_classes: usize,
    graph: Option<&LwAig>,
    dataset_strategy: &SamplingStrategy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let ops = AugmentOp::parse_pair(&cfg.aug, cfg.p, dataset_strategy)?;
    let feature_dim = train_set[0].feature_dim as usize;
    let hgate_cfg = HgateConfig {
        feature_dim,
        hidden_dim: cfg.d,
        layers: cfg.k_layers,
        classes: n_classes,
        leaky_slope: 0.2,
        dropout: cfg.dropout,
    };
    let mut model = HgateModel::new(hgate_cfg, derive_seed(cfg.seed, 0x1217));
    model.scaler = crate::hgate::FeatureScaler::fit(train_set.iter().copied());
    let mut optimizer = match cfg.optimizer.as_str() {
        "sgd" => Optimizer::sgd(cfg.lr),
        _ => Optimizer::adam(cfg.lr),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7241));

    let mut history = Vec::new();
    let mut best_val_f1 = -1.0;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut pred_sum = 0.0;
        let mut self_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            if chunk.len() < 2 {
                continue; // contrast needs at least one negative
            }
            let batch_sgs: Vec<&AccountSubgraph> = chunk.iter().map(|&i| train_set[i]).collect();
            let out =
                train_step(&mut model, &mut optimizer, &batch_sgs, &ops, graph, cfg, &mut rng)
                    .map_err(|e| {
                        if is_nonfinite(&e) {
                            TrainError::NonFiniteLoss {
                                epoch,
                                batch: b,
                                detail: e.to_string(),
                            }
                        } else {
                            e
                        }
                    })?;
            pred_sum += out.l_pred;
            self_sum += out.l_self;
            batches += 1;
        }
        if batches == 0 {
            return Err(TrainError::EmptySplit("train (all batches below size 2)"));
        }
        let (_, val_f1) = evaluate_model(&model, val_set)?;
        history.push(EpochStats {
            epoch,
            l_pred: pred_sum / batches as f64,
            l_self: self_sum / batches as f64,
            val_f1,
        });
        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_f1,
    })
}

/// Repeated stratified cross-validation report.
#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    /// One entry per (repeat, fold) rotation.
    pub fold_f1: Vec<f64>,
    /// Pooled test micro-F1 per repeat.
    pub repeat_f1: Vec<f64>,
    /// Mean and population deviation over repeats.
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Repeats stratified k-fold cross-validation `cfg.repeats` times with
/// reseeded splits. Each rotation tests on one fold, validates on the next,
/// and trains on the rest (with three folds this is the 1:1:1 split); per
/// repeat the pooled test predictions give one micro-F1 score.
pub fn cross_validate(
    dataset: &Dataset,
    graph: Option<&LwAig>,
    cfg: &TrainConfig,
) -> Result<CvReport, TrainError> {
    cfg.validate()?;
    let labels = dataset.labels();
    let n_classes = dataset.meta.classes.len();
    let strategy = dataset.strategy();
    let mut fold_f1 = Vec::new();
    let mut repeat_f1 = Vec::new();
    for repeat in 0..cfg.repeats {
        let split_seed = derive_seed(cfg.seed, 1000 + repeat as u64);
        let assignment = stratified_folds(&labels, cfg.folds, split_seed)?;
        let mut pooled_preds = Vec::new();
        let mut pooled_labels = Vec::new();
        for fold in 0..cfg.folds {
            let val_fold = (fold + 1) % cfg.folds;
            let mut train_set = Vec::new();
            let mut val_set = Vec::new();
            let mut test_set = Vec::new();
            for (i, sg) in dataset.subgraphs.iter().enumerate() {
                if assignment[i] == fold {
                    test_set.push(sg);
                } else if assignment[i] == val_fold {
                    val_set.push(sg);
                } else {
                    train_set.push(sg);
                }
            }
            let mut fold_cfg = cfg.clone();
            fold_cfg.seed = derive_seed(split_seed, fold as u64);
            let outcome = train(&train_set, &val_set, n_classes, graph, &strategy, &fold_cfg)?;
            let (preds, f1) = evaluate_model(&outcome.model, &test_set)?;
            fold_f1.push(f1);
            pooled_preds.extend(preds);
            pooled_labels.extend(test_set.iter().map(|s| s.label as usize));
        }
        repeat_f1.push(micro_f1(&pooled_preds, &pooled_labels));
    }
    let mean = repeat_f1.iter().sum::<f64>() / repeat_f1.len() as f64;
    let var = repeat_f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / repeat_f1.len() as f64;
    Ok(CvReport {
        fold_f1,
        repeat_f1,
        mean_f1: mean,
        std_f1: var.sqrt(),
    })
}
