//! Subgraph augmentation operators for contrastive view generation.
//!
//! Structure-level: node dropping and edge removing. Attribute-level: node
//! and edge attribute masking. Sampling-based: re-sampling the same target
//! with a different strategy. All operators preserve the target node and the
//! subgraph label, and are pure functions of `(input, seed)`.

use crate::graph::{Edge, LwAig};
use crate::sampler::{induce_subgraph, sample_neighborhood, AccountSubgraph, SamplerError, SamplingStrategy};
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("resample augmentation needs the originating graph")]
    ResampleWithoutGraph,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("unknown augmentation {0:?}")]
    UnknownOp(String),
}

/// One augmentation operator. The perturbation probability defaults to 0.10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    Identity,
    /// Drops each non-target node independently and re-induces the edges.
    NodeDrop { p: f64 },
    /// Removes each edge independently, topology only.
    EdgeRemove { p: f64 },
    /// Zeroes each stored node feature entry independently.
    NodeAttrMask { p: f64 },
    /// Zeroes each edge feature dimension independently, per edge.
    EdgeAttrMask { p: f64 },
    /// Re-runs the sampler from the same target under another strategy.
    Resample(SamplingStrategy),
}

pub const DEFAULT_PERTURB_PROB: f64 = 0.10;

impl AugmentOp {
    /// Parses one operator name as used in `op1&op2` config strings.
    /// `resample` picks the lexicographically next strategy among the other
    /// two unless spelled as `resample:<indicator>`.
    pub fn parse(
        name: &str,
        p: f64,
        dataset_strategy: &SamplingStrategy,
    ) -> Result<AugmentOp, AugmentError> {
        let lower = name.trim().to_ascii_lowercase();
        match lower.as_str() {
            "identity" => Ok(AugmentOp::Identity),
            "nodedrop" => Ok(AugmentOp::NodeDrop { p }),
            "edgeremove" => Ok(AugmentOp::EdgeRemove { p }),
            "nodeattrmask" => Ok(AugmentOp::NodeAttrMask { p }),
            "edgeattrmask" => Ok(AugmentOp::EdgeAttrMask { p }),
            _ => {
                if let Some(rest) = lower.strip_prefix("resample") {
                    let indicator = match rest.strip_prefix(':') {
                        Some(ind) => crate::sampler::Indicator::parse(ind)
                            .ok_or_else(|| AugmentError::UnknownOp(name.to_string()))?,
                        None => dataset_strategy.indicator.next(),
                    };
                    Ok(AugmentOp::Resample(SamplingStrategy {
                        indicator,
                        ..*dataset_strategy
                    }))
                } else {
                    Err(AugmentError::UnknownOp(name.to_string()))
                }
            }
        }
    }

    /// Parses an `op1&op2` pair string, e.g. `edgeRemove&nodeDrop`.
    pub fn parse_pair(
        pair: &str,
        p: f64,
        dataset_strategy: &SamplingStrategy,
    ) -> Result<(AugmentOp, AugmentOp), AugmentError> {
        let (a, b) = pair
            .split_once('&')
            .ok_or_else(|| AugmentError::UnknownOp(pair.to_string()))?;
        Ok((
            AugmentOp::parse(a, p, dataset_strategy)?,
            AugmentOp::parse(b, p, dataset_strategy)?,
        ))
    }
}

fn node_drop(sg: &AccountSubgraph, p: f64, rng: &mut ChaCha8Rng) -> AccountSubgraph {
    let n = sg.node_count();
    let mut keep = vec![true; n];
    for flag in keep.iter_mut().skip(1) {
        // the target at position 0 is exempt
        if rng.random::<f64>() < p {
            *flag = false;
        }
    }
    let mut remap = vec![u32::MAX; n];
    let mut global_ids = Vec::new();
    let mut node_feats = Vec::new();
    for i in 0..n {
        if keep[i] {
            remap[i] = global_ids.len() as u32;
            global_ids.push(sg.global_ids[i]);
            node_feats.push(sg.node_feats[i].clone());
        }
    }
    let edges = sg
        .edges
        .iter()
        .filter(|e| keep[e.src as usize] && keep[e.dst as usize])
        .map(|e| Edge {
            src: remap[e.src as usize],
            dst: remap[e.dst as usize],
            times: e.times,
            amount: e.amount,
        })
        .collect();
    AccountSubgraph {
        target_id: sg.target_id.clone(),
        global_ids,
        feature_dim: sg.feature_dim,
        edges,
        node_feats,
        label: sg.label,
    }
}

fn edge_remove(sg: &AccountSubgraph, p: f64, rng: &mut ChaCha8Rng) -> AccountSubgraph {
    let mut out = sg.clone();
    out.edges.retain(|_| rng.random::<f64>() >= p);
    out
}

fn node_attr_mask(sg: &AccountSubgraph, p: f64, rng: &mut ChaCha8Rng) -> AccountSubgraph {
    let mut out = sg.clone();
    for feats in out.node_feats.iter_mut() {
        feats.retain(|_| rng.random::<f64>() >= p);
    }
    out
}

fn edge_attr_mask(sg: &AccountSubgraph, p: f64, rng: &mut ChaCha8Rng) -> AccountSubgraph {
    let mut out = sg.clone();
    for e in out.edges.iter_mut() {
        if rng.random::<f64>() < p {
            e.times = 0;
        }
        if rng.random::<f64>() < p {
            e.amount = 0;
        }
    }
    out
}

/// Applies one operator. The label is carried over as the view's pseudo-label
/// and the target always survives at local position 0.
pub fn apply(
    op: &AugmentOp,
    sg: &AccountSubgraph,
    seed: u64,
    graph: Option<&LwAig>,
) -> Result<AccountSubgraph, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op {
        AugmentOp::Identity => Ok(sg.clone()),
        AugmentOp::NodeDrop { p } => Ok(node_drop(sg, *p, &mut rng)),
        AugmentOp::EdgeRemove { p } => Ok(edge_remove(sg, *p, &mut rng)),
        AugmentOp::NodeAttrMask { p } => Ok(node_attr_mask(sg, *p, &mut rng)),
        AugmentOp::EdgeAttrMask { p } => Ok(edge_attr_mask(sg, *p, &mut rng)),
        AugmentOp::Resample(strategy) => {
            let graph = graph.ok_or(AugmentError::ResampleWithoutGraph)?;
            let target = sg.global_ids[0];
            let nodes = sample_neighborhood(graph, target, strategy)?;
            Ok(induce_subgraph(graph, target, &nodes, sg.label)?)
        }
    }
}

/// Generates the two correlated views of a subgraph under independent
/// sub-seeds derived from `seed`. Both views carry the input's label.
pub fn make_view_pair(
    sg: &AccountSubgraph,
    t1: &AugmentOp,
    t2: &AugmentOp,
    seed: u64,
    graph: Option<&LwAig>,
) -> Result<(AccountSubgraph, AccountSubgraph), AugmentError> {
    let v1 = apply(t1, sg, derive_seed(seed, 1), graph)?;
    let v2 = apply(t2, sg, derive_seed(seed, 2), graph)?;
    Ok((v1, v2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lw_aig;
    use crate::graph::InteractionRecord;
    use crate::sampler::Indicator;

    fn tx(from: &str, to: &str, value: u128) -> InteractionRecord {
        InteractionRecord {
            block_number: 1,
            timestamp: 100,
            from: from.into(),
            to: to.into(),
            from_is_contract: false,
            to_is_contract: false,
            calling_function: None,
            value,
        }
    }

    fn star(n: usize) -> AccountSubgraph {
        let recs: Vec<_> = (0..n)
            .map(|i| tx(&format!("0xn{i:02}"), "0xt", (i + 1) as u128))
            .collect();
        let g = build_lw_aig(&recs);
        let t = g.eoa_idx("0xt").unwrap();
        let nodes: Vec<u32> = (0..g.eoa_count() as u32).collect();
        induce_subgraph(&g, t, &nodes, 3).unwrap()
    }

    #[test]
    fn zero_probability_is_identity_for_all_stochastic_ops() {
        let sg = star(6);
        for op in [
            AugmentOp::NodeDrop { p: 0.0 },
            AugmentOp::EdgeRemove { p: 0.0 },
            AugmentOp::NodeAttrMask { p: 0.0 },
            AugmentOp::EdgeAttrMask { p: 0.0 },
        ] {
            let out = apply(&op, &sg, 1234, None).unwrap();
            assert_eq!(out, sg, "{op:?}");
        }
    }

    #[test]
    fn full_node_drop_leaves_only_the_target() {
        let sg = star(8);
        let out = apply(&AugmentOp::NodeDrop { p: 1.0 }, &sg, 7, None).unwrap();
        assert_eq!(out.global_ids, vec![sg.global_ids[0]]);
        assert!(out.edges.is_empty());
        assert_eq!(out.label, sg.label);
    }

    #[test]
    fn full_edge_attr_mask_zeroes_features_but_keeps_topology() {
        let sg = star(5);
        let out = apply(&AugmentOp::EdgeAttrMask { p: 1.0 }, &sg, 7, None).unwrap();
        assert_eq!(out.edges.len(), sg.edges.len());
        for (a, b) in out.edges.iter().zip(&sg.edges) {
            assert_eq!((a.src, a.dst), (b.src, b.dst));
            assert_eq!((a.times, a.amount), (0, 0));
        }
    }

    #[test]
    fn node_drop_mean_matches_binomial_expectation() {
        // 20 non-target nodes at p = 0.5 over 10_000 seeds: the mean count
        // of survivors must fall within 3 sigma of 10, where
        // sigma = sqrt(20 * 0.25 / 10_000).
        let sg = star(20);
        let mut total = 0usize;
        let runs = 10_000u64;
        for seed in 0..runs {
            let out = apply(&AugmentOp::NodeDrop { p: 0.5 }, &sg, seed, None).unwrap();
            total += out.node_count() - 1;
        }
        let mean = total as f64 / runs as f64;
        let three_sigma = 3.0 * (20.0 * 0.25 / runs as f64).sqrt();
        assert!(
            (mean - 10.0).abs() <= three_sigma,
            "mean {mean} outside 10 +/- {three_sigma}"
        );
    }

    #[test]
    fn view_pairs_are_deterministic_and_independent() {
        let sg = star(10);
        let t1 = AugmentOp::EdgeRemove { p: 0.5 };
        let t2 = AugmentOp::NodeDrop { p: 0.5 };
        let (a1, a2) = make_view_pair(&sg, &t1, &t2, 99, None).unwrap();
        let (b1, b2) = make_view_pair(&sg, &t1, &t2, 99, None).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        assert_eq!(a1.label, sg.label);
        assert_eq!(a2.label, sg.label);
    }

    #[test]
    fn identity_pair_copies_the_input() {
        let sg = star(4);
        let (v1, v2) =
            make_view_pair(&sg, &AugmentOp::Identity, &AugmentOp::Identity, 5, None).unwrap();
        assert_eq!(v1, sg);
        assert_eq!(v2, sg);
    }

    #[test]
    fn edge_remove_one_sided_pair() {
        let sg = star(4);
        let (v1, v2) = make_view_pair(
            &sg,
            &AugmentOp::EdgeRemove { p: 1.0 },
            &AugmentOp::Identity,
            5,
            None,
        )
        .unwrap();
        assert!(v1.edges.is_empty());
        assert_eq!(v2, sg);
    }

    #[test]
    fn resample_without_graph_is_an_error() {
        let sg = star(4);
        let strategy = SamplingStrategy::new(Indicator::Times, 1, 3);
        assert!(matches!(
            apply(&AugmentOp::Resample(strategy), &sg, 0, None),
            Err(AugmentError::ResampleWithoutGraph)
        ));
    }

    #[test]
    fn resample_uses_alternate_strategy() {
        let recs = vec![
            tx("0xt", "0xa", 100), // high amount, 1 interaction
            tx("0xt", "0xb", 1),
            tx("0xt", "0xb", 1),
            tx("0xt", "0xb", 1), // low amount, 3 interactions
        ];
        let g = build_lw_aig(&recs);
        let t = g.eoa_idx("0xt").unwrap();
        let by_amount = SamplingStrategy::new(Indicator::Amount, 1, 1);
        let nodes = sample_neighborhood(&g, t, &by_amount).unwrap();
        let sg = induce_subgraph(&g, t, &nodes, 0).unwrap();
        assert!(sg.global_ids.contains(&g.eoa_idx("0xa").unwrap()));

        let by_times = AugmentOp::Resample(SamplingStrategy::new(Indicator::Times, 1, 1));
        let view = apply(&by_times, &sg, 0, Some(&g)).unwrap();
        assert!(view.global_ids.contains(&g.eoa_idx("0xb").unwrap()));
        assert_eq!(view.global_ids[0], t);
    }

    #[test]
    fn pair_string_parsing() {
        let strategy = SamplingStrategy::new(Indicator::Amount, 2, 20);
        let (a, b) = AugmentOp::parse_pair("edgeRemove&nodeDrop", 0.1, &strategy).unwrap();
        assert_eq!(a, AugmentOp::EdgeRemove { p: 0.1 });
        assert_eq!(b, AugmentOp::NodeDrop { p: 0.1 });
        let (r, _) = AugmentOp::parse_pair("resample&identity", 0.1, &strategy).unwrap();
        match r {
            AugmentOp::Resample(s) => assert_eq!(s.indicator, Indicator::AvgAmount),
            other => panic!("expected resample, got {other:?}"),
        }
        assert!(AugmentOp::parse_pair("bogus&identity", 0.1, &strategy).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        /// Node dropping yields an induced subgraph of the input with the
        /// target and label intact.
        #[test]
        fn node_drop_is_induced_and_target_preserving(seed in 0u64..10_000) {
            let sg = star(12);
            let out = apply(&AugmentOp::NodeDrop { p: 0.4 }, &sg, seed, None).unwrap();
            proptest::prop_assert_eq!(out.global_ids[0], sg.global_ids[0]);
            proptest::prop_assert_eq!(out.label, sg.label);
            let kept: std::collections::BTreeSet<u32> = out.global_ids.iter().copied().collect();
            // every surviving input edge with both endpoints kept must appear
            let expected: usize = sg.edges.iter().filter(|e| {
                kept.contains(&sg.global_ids[e.src as usize]) && kept.contains(&sg.global_ids[e.dst as usize])
            }).count();
            proptest::prop_assert_eq!(out.edges.len(), expected);
        }
    }
}
