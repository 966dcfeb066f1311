//! Hierarchical graph attention encoder.
//!
//! The encoder maps a packed [`SubgraphBatch`] to one embedding per subgraph
//! in three stages:
//!
//! 1. **Feature alignment.** Every node gets a self embedding
//!    `h0_i = Theta_x0 . x_i`; every aggregation pair `(i <- j)` gets an
//!    aligned neighbor input `LeakyRelu(Theta_x . [x_j || e_ij])` that carries
//!    the connecting edge's features into the first attention layer.
//! 2. **Node-level attention**, `k` stacked layers. Scores
//!    `a_ij = LeakyRelu(Theta_n . [h_i || h_j])` are softmax-normalized over
//!    each node's neighbors plus itself, then aggregated through `Theta_alpha`
//!    with an Elu. Layers after the first attend over plain node embeddings.
//! 3. **Attentive pooling.** A column-wise max over each subgraph's nodes
//!    seeds the pooled vector `s`; scores against `[s || h_j]` (plus a self
//!    score `[s || s]`) weight the final aggregation through `Theta_beta`.
//!
//! A projection head (two layers with Relu and a linear skip) produces the
//! contrastive embedding; a prediction head (two layers with Relu and row
//! softmax) produces class probabilities.

mod batch;

pub use batch::{FeatureScaler, SubgraphBatch};

use crate::autodiff::{
    load_named_tensors, save_named_tensors, AutodiffError, CheckpointError, Gradients, Tape, Var,
};
use crate::sampler::AccountSubgraph;
use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HgateError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Encoder hyperparameters. Defaults: hidden dimension 128, two attention
/// layers, LeakyRelu slope 0.2, dropout 0.2 between layers at train time.
#[derive(Debug, Clone, PartialEq)]
pub struct HgateConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub classes: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl HgateConfig {
    pub fn new(feature_dim: usize, classes: usize) -> Self {
        HgateConfig {
            feature_dim,
            hidden_dim: 128,
            layers: 2,
            classes,
            leaky_slope: 0.2,
            dropout: 0.2,
        }
    }
}

/// All learnable tensors. Weight matrices are stored `(out x in)`; biases are
/// single rows initialized to zero, weights Glorot-uniform under a fixed seed.
#[derive(Debug, Clone, PartialEq)]
pub struct HgateParams {
    /// Neighbor alignment, d x (F+2).
    pub theta_x: Array2<f64>,
    /// Self alignment, d x F.
    pub theta_x0: Array2<f64>,
    /// Per-layer attention vector, 1 x 2d.
    pub theta_n: Vec<Array2<f64>>,
    /// Per-layer aggregation transform, d x d.
    pub theta_alpha: Vec<Array2<f64>>,
    /// Pooling attention vector, 1 x 2d.
    pub theta_s: Array2<f64>,
    /// Pooling transform, d x d.
    pub theta_beta: Array2<f64>,
    pub proj_w1: Array2<f64>,
    pub proj_b1: Array2<f64>,
    pub proj_w2: Array2<f64>,
    pub proj_b2: Array2<f64>,
    pub proj_skip: Array2<f64>,
    pub pred_w1: Array2<f64>,
    pub pred_b1: Array2<f64>,
    pub pred_w2: Array2<f64>,
    pub pred_b2: Array2<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
    m
}

impl HgateParams {
    pub fn init(cfg: &HgateConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden_dim;
        let f = cfg.feature_dim;
        let c = cfg.classes;
        HgateParams {
            theta_x: glorot(d, f + 2, &mut rng),
            theta_x0: glorot(d, f, &mut rng),
            theta_n: (0..cfg.layers).map(|_| glorot(1, 2 * d, &mut rng)).collect(),
            theta_alpha: (0..cfg.layers).map(|_| glorot(d, d, &mut rng)).collect(),
            theta_s: glorot(1, 2 * d, &mut rng),
            theta_beta: glorot(d, d, &mut rng),
            proj_w1: glorot(d, d, &mut rng),
            proj_b1: Array2::zeros((1, d)),
            proj_w2: glorot(d, d, &mut rng),
            proj_b2: Array2::zeros((1, d)),
            proj_skip: glorot(d, d, &mut rng),
            pred_w1: glorot(d, d, &mut rng),
            pred_b1: Array2::zeros((1, d)),
            pred_w2: glorot(c, d, &mut rng),
            pred_b2: Array2::zeros((1, c)),
        }
    }

    /// Stable name/tensor listing used by the optimizer and the checkpoint.
    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("theta_x".into(), &self.theta_x),
            ("theta_x0".into(), &self.theta_x0),
        ];
        for (l, t) in self.theta_n.iter().enumerate() {
            out.push((format!("theta_n.{l}"), t));
        }
        for (l, t) in self.theta_alpha.iter().enumerate() {
            out.push((format!("theta_alpha.{l}"), t));
        }
        out.extend([
            ("theta_s".to_string(), &self.theta_s),
            ("theta_beta".to_string(), &self.theta_beta),
            ("proj.w1".to_string(), &self.proj_w1),
            ("proj.b1".to_string(), &self.proj_b1),
            ("proj.w2".to_string(), &self.proj_w2),
            ("proj.b2".to_string(), &self.proj_b2),
            ("proj.skip".to_string(), &self.proj_skip),
            ("pred.w1".to_string(), &self.pred_w1),
            ("pred.b1".to_string(), &self.pred_b1),
            ("pred.w2".to_string(), &self.pred_w2),
            ("pred.b2".to_string(), &self.pred_b2),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("theta_x".into(), &mut self.theta_x),
            ("theta_x0".into(), &mut self.theta_x0),
        ];
        for (l, t) in self.theta_n.iter_mut().enumerate() {
            out.push((format!("theta_n.{l}"), t));
        }
        for (l, t) in self.theta_alpha.iter_mut().enumerate() {
            out.push((format!("theta_alpha.{l}"), t));
        }
        out.extend([
            ("theta_s".to_string(), &mut self.theta_s),
            ("theta_beta".to_string(), &mut self.theta_beta),
            ("proj.w1".to_string(), &mut self.proj_w1),
            ("proj.b1".to_string(), &mut self.proj_b1),
            ("proj.w2".to_string(), &mut self.proj_w2),
            ("proj.b2".to_string(), &mut self.proj_b2),
            ("proj.skip".to_string(), &mut self.proj_skip),
            ("pred.w1".to_string(), &mut self.pred_w1),
            ("pred.b1".to_string(), &mut self.pred_b1),
            ("pred.w2".to_string(), &mut self.pred_w2),
            ("pred.b2".to_string(), &mut self.pred_b2),
        ]);
        out
    }
}

/// Tape handles for every parameter, in [`HgateParams::named`] order.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    fn theta_x(&self) -> Var {
        self.vars[0]
    }
    fn theta_x0(&self) -> Var {
        self.vars[1]
    }
    fn theta_n(&self, l: usize) -> Var {
        self.vars[2 + l]
    }
    fn theta_alpha(&self, layers: usize, l: usize) -> Var {
        self.vars[2 + layers + l]
    }
    /// Slots after the per-layer tensors: theta_s, theta_beta, the projection
    /// head, then the prediction head.
    fn tail(&self, layers: usize, offset: usize) -> Var {
        self.vars[2 + 2 * layers + offset]
    }
}

/// One attention stage's output with its normalized scores, kept for
/// diagnostics and tests.
pub struct AttentionOut {
    pub h: Var,
    pub weights: Var,
    pub ids: Rc<Vec<usize>>,
}

/// Initial embeddings: per-node self embeddings and per-pair aligned
/// neighbor inputs (absent when the batch has no aggregation pairs).
pub fn align_neighbors(
    tape: &Tape,
    theta_x: Var,
    theta_x0: Var,
    x: Var,
    pair_src: &Rc<Vec<usize>>,
    edge_feats: Var,
    slope: f64,
) -> Result<(Var, Option<Var>), HgateError> {
    let tx0 = tape.transpose(theta_x0)?;
    let h0 = tape.matmul(x, tx0)?;
    if pair_src.is_empty() {
        return Ok((h0, None));
    }
    let x_src = tape.gather_rows(x, Rc::clone(pair_src))?;
    let aligned_in = tape.concat_cols(x_src, edge_feats)?;
    let tx = tape.transpose(theta_x)?;
    let u = tape.leaky_relu(tape.matmul(aligned_in, tx)?, slope)?;
    Ok((h0, Some(u)))
}

/// One node-level attention layer over `h` with optional per-pair neighbor
/// values (layer 0 uses aligned pair inputs, later layers gather from `h`).
#[allow(clippy::too_many_arguments)]
pub fn node_attention_layer(
    tape: &Tape,
    theta_n: Var,
    theta_alpha: Var,
    h: Var,
    neighbor_vals: Option<Var>,
    pair_dst: &Rc<Vec<usize>>,
    n_nodes: usize,
    slope: f64,
) -> Result<AttentionOut, HgateError> {
    let tn = tape.transpose(theta_n)?;
    let self_in = tape.concat_cols(h, h)?;
    let self_scores = tape.leaky_relu(tape.matmul(self_in, tn)?, slope)?;

    let (scores, values, ids) = match neighbor_vals {
        Some(vals) if !pair_dst.is_empty() => {
            let h_dst = tape.gather_rows(h, Rc::clone(pair_dst))?;
            let pair_in = tape.concat_cols(h_dst, vals)?;
            let pair_scores = tape.leaky_relu(tape.matmul(pair_in, tn)?, slope)?;
            let scores = tape.concat_rows(self_scores, pair_scores)?;
            let values = tape.concat_rows(h, vals)?;
            let mut ids: Vec<usize> = (0..n_nodes).collect();
            ids.extend(pair_dst.iter().copied());
            (scores, values, Rc::new(ids))
        }
        _ => (self_scores, h, Rc::new((0..n_nodes).collect::<Vec<_>>())),
    };
    let alpha = tape.segment_softmax(scores, Rc::clone(&ids), n_nodes)?;
    let agg = tape.segment_weighted_sum(values, alpha, Rc::clone(&ids), n_nodes)?;
    let ta = tape.transpose(theta_alpha)?;
    let h_next = tape.elu(tape.matmul(agg, ta)?)?;
    Ok(AttentionOut {
        h: h_next,
        weights: alpha,
        ids,
    })
}

/// Subgraph-level attentive pooling: max-pool seed, scores over nodes plus
/// the seed itself, weighted aggregation through `theta_beta`.
pub fn attentive_pool(
    tape: &Tape,
    theta_s: Var,
    theta_beta: Var,
    h: Var,
    node_segments: &Rc<Vec<usize>>,
    n_subgraphs: usize,
    slope: f64,
) -> Result<AttentionOut, HgateError> {
    let seed = tape.segment_max(h, Rc::clone(node_segments), n_subgraphs)?;
    let ts = tape.transpose(theta_s)?;
    let seed_per_node = tape.gather_rows(seed, Rc::clone(node_segments))?;
    let node_in = tape.concat_cols(seed_per_node, h)?;
    let node_scores = tape.leaky_relu(tape.matmul(node_in, ts)?, slope)?;
    let self_in = tape.concat_cols(seed, seed)?;
    let self_scores = tape.leaky_relu(tape.matmul(self_in, ts)?, slope)?;

    let scores = tape.concat_rows(self_scores, node_scores)?;
    let values = tape.concat_rows(seed, h)?;
    let mut ids: Vec<usize> = (0..n_subgraphs).collect();
    ids.extend(node_segments.iter().copied());
    let ids = Rc::new(ids);
    let beta = tape.segment_softmax(scores, Rc::clone(&ids), n_subgraphs)?;
    let pooled = tape.segment_weighted_sum(values, beta, Rc::clone(&ids), n_subgraphs)?;
    let tb = tape.transpose(theta_beta)?;
    let g = tape.elu(tape.matmul(pooled, tb)?)?;
    Ok(AttentionOut {
        h: g,
        weights: beta,
        ids,
    })
}

/// Encoder, heads, and the feature scaler fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct HgateModel {
    pub config: HgateConfig,
    pub params: HgateParams,
    pub scaler: FeatureScaler,
}

impl HgateModel {
    pub fn new(config: HgateConfig, seed: u64) -> Self {
        let params = HgateParams::init(&config, seed);
        HgateModel {
            config,
            params,
            scaler: FeatureScaler::identity(),
        }
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &Tape) -> Result<BoundParams, HgateError> {
        let vars = self
            .params
            .named()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BoundParams { vars })
    }

    /// Encodes a batch into one embedding row per subgraph.
    pub fn encode(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        batch: &SubgraphBatch,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var, HgateError> {
        let n = batch.node_count();
        let x = tape.leaf(batch.node_features.clone())?;
        let edge_feats = tape.leaf(batch.pair_edge_feats.clone())?;
        let pair_src = Rc::new(batch.pair_src.clone());
        let pair_dst = Rc::new(batch.pair_dst.clone());
        let node_segments = Rc::new(batch.node_segments.clone());

        let (mut h, aligned) = align_neighbors(
            tape,
            bound.theta_x(),
            bound.theta_x0(),
            x,
            &pair_src,
            edge_feats,
            self.config.leaky_slope,
        )?;
        for l in 0..self.config.layers {
            let neighbor_vals = if pair_dst.is_empty() {
                None
            } else if l == 0 {
                aligned
            } else {
                Some(tape.gather_rows(h, Rc::clone(&pair_src))?)
            };
            let out = node_attention_layer(
                tape,
                bound.theta_n(l),
                bound.theta_alpha(self.config.layers, l),
                h,
                neighbor_vals,
                &pair_dst,
                n,
                self.config.leaky_slope,
            )?;
            h = out.h;
            if l + 1 < self.config.layers {
                h = tape.dropout(h, self.config.dropout, train, rng)?;
            }
        }
        let pooled = attentive_pool(
            tape,
            bound.tail(self.config.layers, 0),
            bound.tail(self.config.layers, 1),
            h,
            &node_segments,
            batch.n_subgraphs,
            self.config.leaky_slope,
        )?;
        Ok(pooled.h)
    }

    /// Projection head: `z = W2 . Relu(W1 . g + b1) + b2 + S . g`.
    pub fn project(&self, tape: &Tape, bound: &BoundParams, g: Var) -> Result<Var, HgateError> {
        let k = self.config.layers;
        let w1 = tape.transpose(bound.tail(k, 2))?;
        let b1 = bound.tail(k, 3);
        let w2 = tape.transpose(bound.tail(k, 4))?;
        let b2 = bound.tail(k, 5);
        let skip = tape.transpose(bound.tail(k, 6))?;
        let hidden = tape.relu(tape.add_bias(tape.matmul(g, w1)?, b1)?)?;
        let main = tape.add_bias(tape.matmul(hidden, w2)?, b2)?;
        let skip_term = tape.matmul(g, skip)?;
        Ok(tape.add(main, skip_term)?)
    }

    /// Prediction head logits: `W2 . Relu(W1 . g + b1) + b2`.
    pub fn predict_logits(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        g: Var,
    ) -> Result<Var, HgateError> {
        let k = self.config.layers;
        let w1 = tape.transpose(bound.tail(k, 7))?;
        let b1 = bound.tail(k, 8);
        let w2 = tape.transpose(bound.tail(k, 9))?;
        let b2 = bound.tail(k, 10);
        let hidden = tape.relu(tape.add_bias(tape.matmul(g, w1)?, b1)?)?;
        Ok(tape.add_bias(tape.matmul(hidden, w2)?, b2)?)
    }

    /// Class probabilities, rows summing to one.
    pub fn predict_probs(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        g: Var,
    ) -> Result<Var, HgateError> {
        let logits = self.predict_logits(tape, bound, g)?;
        Ok(tape.softmax_rows(logits)?)
    }

    /// Evaluation-mode subgraph embeddings (no dropout, nothing retained).
    pub fn embed_eval(&self, subgraphs: &[&AccountSubgraph]) -> Result<Array2<f64>, HgateError> {
        let batch = SubgraphBatch::build(subgraphs, &self.scaler)?;
        let tape = Tape::new();
        let bound = self.bind(&tape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = self.encode(&tape, &bound, &batch, false, &mut rng)?;
        Ok(tape.value(g))
    }

    /// Evaluation-mode class probabilities.
    pub fn predict_eval(&self, subgraphs: &[&AccountSubgraph]) -> Result<Array2<f64>, HgateError> {
        let batch = SubgraphBatch::build(subgraphs, &self.scaler)?;
        let tape = Tape::new();
        let bound = self.bind(&tape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = self.encode(&tape, &bound, &batch, false, &mut rng)?;
        let probs = self.predict_probs(&tape, &bound, g)?;
        Ok(tape.value(probs))
    }

    /// Gradients of every parameter, aligned with [`HgateParams::named`].
    pub fn param_grads(&self, bound: &BoundParams, grads: &Gradients) -> Vec<Array2<f64>> {
        self.params
            .named()
            .iter()
            .zip(&bound.vars)
            .map(|((_, t), &v)| grads.get_or_zeros(v, t.dim()))
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HgateError> {
        let meta = [
            (
                "meta.leaky_slope".to_string(),
                Array2::from_elem((1, 1), self.config.leaky_slope),
            ),
            (
                "meta.dropout".to_string(),
                Array2::from_elem((1, 1), self.config.dropout),
            ),
            (
                "scaler.edge_mean".to_string(),
                Array2::from_shape_vec((1, 2), self.scaler.edge_mean.to_vec()).unwrap(),
            ),
            (
                "scaler.edge_std".to_string(),
                Array2::from_shape_vec((1, 2), self.scaler.edge_std.to_vec()).unwrap(),
            ),
        ];
        let mut entries: Vec<(String, &Array2<f64>)> = Vec::new();
        for (name, t) in &meta {
            entries.push((name.clone(), t));
        }
        let named = self.params.named();
        for (name, t) in &named {
            entries.push((name.clone(), t));
        }
        save_named_tensors(path, &entries)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HgateError> {
        let tensors = load_named_tensors(path)?;
        let get = |name: &str| -> Result<Array2<f64>, HgateError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| HgateError::BadCheckpoint(format!("missing tensor {name}")))
        };
        let theta_x = get("theta_x")?;
        let theta_x0 = get("theta_x0")?;
        let layers = tensors
            .iter()
            .filter(|(n, _)| n.starts_with("theta_n."))
            .count();
        if layers == 0 {
            return Err(HgateError::BadCheckpoint("no attention layers".into()));
        }
        let mut theta_n = Vec::with_capacity(layers);
        let mut theta_alpha = Vec::with_capacity(layers);
        for l in 0..layers {
            theta_n.push(get(&format!("theta_n.{l}"))?);
            theta_alpha.push(get(&format!("theta_alpha.{l}"))?);
        }
        let pred_w2 = get("pred.w2")?;
        let config = HgateConfig {
            feature_dim: theta_x0.ncols(),
            hidden_dim: theta_x0.nrows(),
            layers,
            classes: pred_w2.nrows(),
            leaky_slope: get("meta.leaky_slope")?[[0, 0]],
            dropout: get("meta.dropout")?[[0, 0]],
        };
        let scaler_mean = get("scaler.edge_mean")?;
        let scaler_std = get("scaler.edge_std")?;
        let params = HgateParams {
            theta_x,
            theta_x0,
            theta_n,
            theta_alpha,
            theta_s: get("theta_s")?,
            theta_beta: get("theta_beta")?,
            proj_w1: get("proj.w1")?,
            proj_b1: get("proj.b1")?,
            proj_w2: get("proj.w2")?,
            proj_b2: get("proj.b2")?,
            proj_skip: get("proj.skip")?,
            pred_w1: get("pred.w1")?,
            pred_b1: get("pred.b1")?,
            pred_w2,
            pred_b2: get("pred.b2")?,
        };
        Ok(HgateModel {
            config,
            params,
            scaler: FeatureScaler {
                edge_mean: [scaler_mean[[0, 0]], scaler_mean[[0, 1]]],
                edge_std: [scaler_std[[0, 0]], scaler_std[[0, 1]]],
            },
        })
    }
}

#[cfg(test)]
mod tests;
