//! Packing subgraphs into dense batches for the encoder.
//!
//! Node features are log1p'd call counts; edge features are log1p'd
//! `[times, amount]` standardized per column with statistics fitted on the
//! training split. Aggregation pairs `(i <- j)` enumerate each node's
//! undirected neighbors; the pair's edge feature comes from the `j -> i`
//! edge when present, otherwise from `i -> j`. Self-loops contribute to edge
//! statistics during sampling but are not duplicated as attention neighbors;
//! the explicit self term of the attention layer covers them.

use super::HgateError;
use crate::sampler::AccountSubgraph;
use ndarray::Array2;
use std::collections::{BTreeSet, HashMap};

/// Per-column standardization of edge features, fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub edge_mean: [f64; 2],
    pub edge_std: [f64; 2],
}

fn log1p_edge(times: u64, amount: u128) -> [f64; 2] {
    [(times as f64).ln_1p(), (amount as f64).ln_1p()]
}

impl FeatureScaler {
    /// No-op scaler (zero mean, unit deviation).
    pub fn identity() -> Self {
        FeatureScaler {
            edge_mean: [0.0; 2],
            edge_std: [1.0; 2],
        }
    }

    /// Fits mean and population deviation of the log1p'd edge features over
    /// every edge of the given subgraphs. Degenerate columns fall back to
    /// unit deviation.
    pub fn fit<'a>(subgraphs: impl IntoIterator<Item = &'a AccountSubgraph>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for sg in subgraphs {
            for e in &sg.edges {
                let f = log1p_edge(e.times, e.amount);
                for c in 0..2 {
                    sum[c] += f[c];
                    sum_sq[c] += f[c] * f[c];
                }
                n += 1;
            }
        }
        if n == 0 {
            return FeatureScaler::identity();
        }
        let mut mean = [0.0; 2];
        let mut std = [1.0; 2];
        for c in 0..2 {
            mean[c] = sum[c] / n as f64;
            let var = (sum_sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            let s = var.sqrt();
            std[c] = if s > 1e-12 { s } else { 1.0 };
        }
        FeatureScaler {
            edge_mean: mean,
            edge_std: std,
        }
    }

    pub fn transform(&self, times: u64, amount: u128) -> [f64; 2] {
        let f = log1p_edge(times, amount);
        [
            (f[0] - self.edge_mean[0]) / self.edge_std[0],
            (f[1] - self.edge_mean[1]) / self.edge_std[1],
        ]
    }
}

/// Several subgraphs packed into flat arrays with segment bookkeeping.
#[derive(Debug, Clone)]
pub struct SubgraphBatch {
    /// Total nodes x feature_dim, log1p'd call counts.
    pub node_features: Array2<f64>,
    /// Aggregation pairs: `pair_dst[p]` receives from `pair_src[p]`.
    pub pair_src: Vec<usize>,
    pub pair_dst: Vec<usize>,
    /// Pairs x 2, standardized edge features aligned with the pair list.
    pub pair_edge_feats: Array2<f64>,
    /// Node row -> subgraph index; sorted and contiguous by construction.
    pub node_segments: Vec<usize>,
    /// Node row of each subgraph's target account.
    pub target_positions: Vec<usize>,
    /// One label per subgraph.
    pub labels: Vec<usize>,
    pub n_subgraphs: usize,
}

impl SubgraphBatch {
    pub fn node_count(&self) -> usize {
        self.node_segments.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pair_src.len()
    }

    pub fn build(
        subgraphs: &[&AccountSubgraph],
        scaler: &FeatureScaler,
    ) -> Result<SubgraphBatch, HgateError> {
        if subgraphs.is_empty() {
            return Err(HgateError::Batch("empty batch".into()));
        }
        let feature_dim = subgraphs[0].feature_dim as usize;
        let total_nodes: usize = subgraphs.iter().map(|s| s.node_count()).sum();
        let mut node_features = Array2::zeros((total_nodes, feature_dim));
        let mut node_segments = Vec::with_capacity(total_nodes);
        let mut target_positions = Vec::with_capacity(subgraphs.len());
        let mut labels = Vec::with_capacity(subgraphs.len());
        let mut pair_src = Vec::new();
        let mut pair_dst = Vec::new();
        let mut pair_feats: Vec<[f64; 2]> = Vec::new();

        let mut offset = 0usize;
        for (b, sg) in subgraphs.iter().enumerate() {
            if sg.feature_dim as usize != feature_dim {
                return Err(HgateError::Batch(format!(
                    "mixed feature dims {feature_dim} vs {}",
                    sg.feature_dim
                )));
            }
            let n = sg.node_count();
            if n == 0 {
                return Err(HgateError::Batch(format!("subgraph {b} has no nodes")));
            }
            for (i, feats) in sg.node_feats.iter().enumerate() {
                for &(ca, count) in feats {
                    node_features[[offset + i, ca as usize]] = (count as f64).ln_1p();
                }
                node_segments.push(b);
            }
            target_positions.push(offset);
            labels.push(sg.label as usize);

            let mut by_pair: HashMap<(u32, u32), usize> = HashMap::new();
            let mut neighbors: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
            for (e_idx, e) in sg.edges.iter().enumerate() {
                by_pair.insert((e.src, e.dst), e_idx);
                if e.src != e.dst {
                    neighbors[e.src as usize].insert(e.dst);
                    neighbors[e.dst as usize].insert(e.src);
                }
            }
            for i in 0..n as u32 {
                for &j in &neighbors[i as usize] {
                    // incoming edge j -> i preferred, else outgoing i -> j
                    let e_idx = by_pair
                        .get(&(j, i))
                        .or_else(|| by_pair.get(&(i, j)))
                        .copied()
                        .expect("neighbor implies an edge");
                    let e = &sg.edges[e_idx];
                    pair_dst.push(offset + i as usize);
                    pair_src.push(offset + j as usize);
                    pair_feats.push(scaler.transform(e.times, e.amount));
                }
            }
            offset += n;
        }

        let mut pair_edge_feats = Array2::zeros((pair_feats.len(), 2));
        for (r, f) in pair_feats.iter().enumerate() {
            pair_edge_feats[[r, 0]] = f[0];
            pair_edge_feats[[r, 1]] = f[1];
        }
        Ok(SubgraphBatch {
            node_features,
            pair_src,
            pair_dst,
            pair_edge_feats,
            node_segments,
            target_positions,
            labels,
            n_subgraphs: subgraphs.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn sg_two_nodes() -> AccountSubgraph {
        AccountSubgraph {
            target_id: "0xt".into(),
            global_ids: vec![7, 9],
            feature_dim: 3,
            edges: vec![Edge {
                src: 1,
                dst: 0,
                times: 2,
                amount: 10,
            }],
            node_feats: vec![vec![(0, 1)], vec![(2, 4)]],
            label: 1,
        }
    }

    #[test]
    fn builds_pairs_in_both_directions() {
        let sg = sg_two_nodes();
        let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
        assert_eq!(batch.node_count(), 2);
        // one undirected neighbor relation yields two aggregation pairs
        assert_eq!(batch.pair_count(), 2);
        assert_eq!(batch.pair_dst, vec![0, 1]);
        assert_eq!(batch.pair_src, vec![1, 0]);
        // both pairs resolve to the same physical edge (1 -> 0)
        let expected = FeatureScaler::identity().transform(2, 10);
        for r in 0..2 {
            assert_eq!(batch.pair_edge_feats[[r, 0]], expected[0]);
            assert_eq!(batch.pair_edge_feats[[r, 1]], expected[1]);
        }
        assert_eq!(batch.node_features[[0, 0]], 1f64.ln_1p());
        assert_eq!(batch.node_features[[1, 2]], 4f64.ln_1p());
        assert_eq!(batch.labels, vec![1]);
    }

    #[test]
    fn self_loops_do_not_create_pairs() {
        let mut sg = sg_two_nodes();
        sg.edges.push(Edge {
            src: 0,
            dst: 0,
            times: 1,
            amount: 5,
        });
        let batch = SubgraphBatch::build(&[&sg], &FeatureScaler::identity()).unwrap();
        assert_eq!(batch.pair_count(), 2);
    }

    #[test]
    fn scaler_standardizes_to_zero_mean_unit_std() {
        let sg = AccountSubgraph {
            target_id: "0xt".into(),
            global_ids: vec![0, 1, 2],
            feature_dim: 1,
            edges: vec![
                Edge { src: 0, dst: 1, times: 1, amount: 2 },
                Edge { src: 0, dst: 2, times: 5, amount: 90 },
                Edge { src: 1, dst: 2, times: 9, amount: 500 },
            ],
            node_feats: vec![vec![], vec![], vec![]],
            label: 0,
        };
        let scaler = FeatureScaler::fit([&sg]);
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        let transformed: Vec<[f64; 2]> = sg
            .edges
            .iter()
            .map(|e| scaler.transform(e.times, e.amount))
            .collect();
        for t in &transformed {
            for c in 0..2 {
                mean[c] += t[c] / 3.0;
            }
        }
        for t in &transformed {
            for c in 0..2 {
                var[c] += (t[c] - mean[c]).powi(2) / 3.0;
            }
        }
        for c in 0..2 {
            assert!(mean[c].abs() < 1e-12);
            assert!((var[c] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_falls_back_to_unit_std() {
        let sg = AccountSubgraph {
            target_id: "0xt".into(),
            global_ids: vec![0, 1],
            feature_dim: 1,
            edges: vec![Edge { src: 0, dst: 1, times: 3, amount: 7 }],
            node_feats: vec![vec![], vec![]],
            label: 0,
        };
        let scaler = FeatureScaler::fit([&sg]);
        assert_eq!(scaler.edge_std, [1.0, 1.0]);
        let t = scaler.transform(3, 7);
        assert!(t[0].abs() < 1e-12 && t[1].abs() < 1e-12);
    }
}
