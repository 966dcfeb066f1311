//! TopK neighborhood subgraph sampling.
//!
//! Starting from a target account, each hop expands every node sampled at the
//! previous hop by its top-K neighbors ranked by one of three edge statistics:
//! total amount, interaction count, or average amount per interaction.
//! Neighbors are taken over the union of in- and out-edges; when both
//! directions exist the larger statistic wins. Ties break toward the smaller
//! node index so sampling is fully deterministic.

mod dataset;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetMeta, StrategyMeta};

use crate::graph::{Edge, LwAig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("node {0} is not in the graph")]
    UnknownNode(String),
    #[error("need {needed} negatives but only {available} other labeled accounts exist")]
    InsufficientNegatives { needed: usize, available: usize },
    #[error("no account carries label {0:?}")]
    NoPositives(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
}

/// Edge statistic that ranks neighbors during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Indicator {
    Amount,
    Times,
    AvgAmount,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Amount, Indicator::Times, Indicator::AvgAmount];

    pub fn parse(s: &str) -> Option<Indicator> {
        match s.to_ascii_lowercase().as_str() {
            "amount" | "a" => Some(Indicator::Amount),
            "times" | "t" => Some(Indicator::Times),
            "avgamount" | "averamount" | "aa" => Some(Indicator::AvgAmount),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Indicator::Amount => "amount",
            Indicator::Times => "times",
            Indicator::AvgAmount => "avgAmount",
        }
    }

    /// Dataset directory suffix convention.
    pub fn suffix(&self) -> &'static str {
        match self {
            Indicator::Amount => "-A",
            Indicator::Times => "-T",
            Indicator::AvgAmount => "-aA",
        }
    }

    /// The lexicographically next strategy name among the other two, used as
    /// the default pick for sampling-based augmentation.
    pub fn next(&self) -> Indicator {
        match self {
            Indicator::Amount => Indicator::AvgAmount,
            Indicator::AvgAmount => Indicator::Times,
            Indicator::Times => Indicator::Amount,
        }
    }

    fn score(&self, e: &Edge) -> Score {
        match self {
            Indicator::Amount => Score::Int(e.amount),
            Indicator::Times => Score::Int(e.times as u128),
            Indicator::AvgAmount => Score::Avg(e.amount as f64 / e.times as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Score {
    Int(u128),
    Avg(f64),
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::Int(a), Score::Int(b)) => a.cmp(b),
            (Score::Avg(a), Score::Avg(b)) => a.partial_cmp(b).expect("finite scores"),
            _ => unreachable!("mixed score kinds within one run"),
        }
    }
}

/// h-hop TopK sampling configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingStrategy {
    pub indicator: Indicator,
    /// Hop count h, at least 1.
    pub hops: usize,
    /// Per-hop fan-out K, at least 1.
    pub fanout: usize,
}

impl SamplingStrategy {
    pub fn new(indicator: Indicator, hops: usize, fanout: usize) -> Self {
        SamplingStrategy {
            indicator,
            hops,
            fanout,
        }
    }
}

/// Neighbors of `v` (in- and out-edges merged, max statistic on conflicts)
/// ranked by score descending with index ascending as the tie break.
fn ranked_neighbors(graph: &LwAig, v: u32, indicator: Indicator) -> Vec<(u32, Score)> {
    let mut best: HashMap<u32, Score> = HashMap::new();
    for e in graph.out_edges(v) {
        let s = indicator.score(e);
        best.entry(e.dst)
            .and_modify(|cur| {
                if s.cmp(cur) == Ordering::Greater {
                    *cur = s;
                }
            })
            .or_insert(s);
    }
    for e in graph.in_edges(v) {
        let s = indicator.score(e);
        best.entry(e.src)
            .and_modify(|cur| {
                if s.cmp(cur) == Ordering::Greater {
                    *cur = s;
                }
            })
            .or_insert(s);
    }
    let mut out: Vec<(u32, Score)> = best.into_iter().collect();
    out.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Samples the h-hop TopK node set around `target`, target included.
///
/// Nodes already selected at earlier hops may reappear in a later top-K but
/// contribute nothing new; a fan-out larger than the neighbor count simply
/// returns all neighbors. The result is sorted ascending.
pub fn sample_neighborhood(
    graph: &LwAig,
    target: u32,
    strategy: &SamplingStrategy,
) -> Result<Vec<u32>, SamplerError> {
    if target as usize >= graph.eoa_count() {
        return Err(SamplerError::UnknownNode(format!("#{target}")));
    }
    let mut selected: BTreeSet<u32> = BTreeSet::new();
    selected.insert(target);
    let mut frontier = vec![target];
    for _ in 0..strategy.hops {
        let mut next = Vec::new();
        for &v in &frontier {
            for (u, _) in ranked_neighbors(graph, v, strategy.indicator)
                .into_iter()
                .take(strategy.fanout)
            {
                if selected.insert(u) {
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    Ok(selected.into_iter().collect())
}

/// Induced neighborhood subgraph of one target account with its label.
///
/// Local node 0 is always the target; the remaining nodes keep ascending
/// graph order. Edges are exactly the graph edges with both endpoints inside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountSubgraph {
    /// Address of the target account.
    pub target_id: String,
    /// Graph node indices; position 0 is the target.
    pub global_ids: Vec<u32>,
    /// Node feature dimension (contract account count of the source graph).
    pub feature_dim: u32,
    /// Edges in local indices, sorted by (src, dst).
    pub edges: Vec<Edge>,
    /// Per-local-node sparse call counts.
    pub node_feats: Vec<Vec<(u32, u64)>>,
    /// Class id into the owning dataset's class list.
    pub label: u32,
}

impl AccountSubgraph {
    pub fn node_count(&self) -> usize {
        self.global_ids.len()
    }
}

/// Copies all and only the edges with both endpoints in `nodes`, restricts
/// node features, and attaches the target's label.
pub fn induce_subgraph(
    graph: &LwAig,
    target: u32,
    nodes: &[u32],
    label: u32,
) -> Result<AccountSubgraph, SamplerError> {
    if !nodes.contains(&target) {
        return Err(SamplerError::UnknownNode(format!(
            "target #{target} not in node set"
        )));
    }
    let mut ordered: Vec<u32> = Vec::with_capacity(nodes.len());
    ordered.push(target);
    let mut rest: Vec<u32> = nodes.iter().copied().filter(|&n| n != target).collect();
    rest.sort_unstable();
    rest.dedup();
    ordered.extend(rest);
    let local: HashMap<u32, u32> = ordered
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i as u32))
        .collect();
    let mut edges = Vec::new();
    for &g in &ordered {
        if g as usize >= graph.eoa_count() {
            return Err(SamplerError::UnknownNode(format!("#{g}")));
        }
        for e in graph.out_edges(g) {
            if let Some(&dst_local) = local.get(&e.dst) {
                edges.push(Edge {
                    src: local[&g],
                    dst: dst_local,
                    times: e.times,
                    amount: e.amount,
                });
            }
        }
    }
    edges.sort_unstable_by_key(|e| (e.src, e.dst));
    let node_feats = ordered
        .iter()
        .map(|&g| graph.node_features(g).to_vec())
        .collect();
    Ok(AccountSubgraph {
        target_id: graph.eoa_id(target).to_string(),
        global_ids: ordered,
        feature_dim: graph.ca_count() as u32,
        edges,
        node_feats,
        label,
    })
}

fn sample_one(
    graph: &LwAig,
    target: u32,
    strategy: &SamplingStrategy,
    label: u32,
) -> Result<AccountSubgraph, SamplerError> {
    let nodes = sample_neighborhood(graph, target, strategy)?;
    induce_subgraph(graph, target, &nodes, label)
}

/// Samples subgraphs for every labeled account, one class per distinct label.
/// Targets are processed in ascending node order; classes are sorted by name.
pub fn build_multiclass_dataset(
    graph: &LwAig,
    strategy: &SamplingStrategy,
    seed: u64,
) -> Result<Dataset, SamplerError> {
    let mut classes: Vec<String> = graph
        .labels()
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    classes.sort();
    let class_of = |label: &str| classes.iter().position(|c| c == label).unwrap() as u32;
    let targets: Vec<(u32, u32)> = graph
        .labels()
        .iter()
        .map(|(&node, label)| (node, class_of(label)))
        .collect();
    let subgraphs = targets
        .par_iter()
        .map(|&(node, class)| sample_one(graph, node, strategy, class))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        meta: DatasetMeta::new(strategy, seed, classes, None, graph.ca_count() as u32),
        subgraphs,
    })
}

/// Binary dataset per the positive-versus-rest protocol: every account with
/// `positive_label` plus `negative_ratio` times as many negatives drawn
/// uniformly without replacement from the other labeled accounts.
pub fn build_dataset(
    graph: &LwAig,
    strategy: &SamplingStrategy,
    positive_label: &str,
    negative_ratio: f64,
    seed: u64,
) -> Result<Dataset, SamplerError> {
    let mut positives = Vec::new();
    let mut others = Vec::new();
    for (&node, label) in graph.labels() {
        if label == positive_label {
            positives.push(node);
        } else {
            others.push(node);
        }
    }
    if positives.is_empty() {
        return Err(SamplerError::NoPositives(positive_label.to_string()));
    }
    let needed = (positives.len() as f64 * negative_ratio).round() as usize;
    if others.len() < needed {
        return Err(SamplerError::InsufficientNegatives {
            needed,
            available: others.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    others.shuffle(&mut rng);
    let mut negatives = others[..needed].to_vec();
    negatives.sort_unstable();

    let classes = vec![positive_label.to_string(), "other".to_string()];
    let mut targets: Vec<(u32, u32)> = positives.into_iter().map(|n| (n, 0)).collect();
    targets.extend(negatives.into_iter().map(|n| (n, 1)));
    let subgraphs = targets
        .par_iter()
        .map(|&(node, class)| sample_one(graph, node, strategy, class))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        meta: DatasetMeta::new(
            strategy,
            seed,
            classes,
            Some(positive_label.to_string()),
            graph.ca_count() as u32,
        ),
        subgraphs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lw_aig, InteractionRecord};

    pub(crate) fn tx(from: &str, to: &str, value: u128) -> InteractionRecord {
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

    /// Literal transcription of the recursive top-K formula: materializes
    /// every hop set (reappearances included) and sorts full neighbor lists.
    pub(crate) fn brute_force_sample(
        graph: &LwAig,
        target: u32,
        strategy: &SamplingStrategy,
    ) -> BTreeSet<u32> {
        fn stat(ind: Indicator, e: &Edge) -> (u128, f64) {
            match ind {
                Indicator::Amount => (e.amount, 0.0),
                Indicator::Times => (e.times as u128, 0.0),
                Indicator::AvgAmount => (0, e.amount as f64 / e.times as f64),
            }
        }
        let mut all: BTreeSet<u32> = BTreeSet::new();
        all.insert(target);
        let mut prev: BTreeSet<u32> = all.clone();
        for _ in 0..strategy.hops {
            let mut here = BTreeSet::new();
            for &v in &prev {
                let mut cands: Vec<(u32, (u128, f64))> = Vec::new();
                for u in 0..graph.eoa_count() as u32 {
                    let fwd = graph.edge_between(v, u).map(|e| stat(strategy.indicator, e));
                    let bwd = graph.edge_between(u, v).map(|e| stat(strategy.indicator, e));
                    let best = match (fwd, bwd) {
                        (Some(a), Some(b)) => {
                            Some(if a.0 > b.0 || (a.0 == b.0 && a.1 >= b.1) { a } else { b })
                        }
                        (Some(a), None) => Some(a),
                        (None, Some(b)) => Some(b),
                        (None, None) => None,
                    };
                    if let Some(s) = best {
                        cands.push((u, s));
                    }
                }
                cands.sort_by(|a, b| {
                    b.1 .0
                        .cmp(&a.1 .0)
                        .then(b.1 .1.partial_cmp(&a.1 .1).unwrap())
                        .then(a.0.cmp(&b.0))
                });
                for (u, _) in cands.into_iter().take(strategy.fanout) {
                    here.insert(u);
                }
            }
            all.extend(here.iter().copied());
            prev = here;
        }
        all
    }

    #[test]
    fn isolated_target_returns_only_itself() {
        let g = build_lw_aig(&[tx("x", "y", 1), {
            let mut r = tx("t", "c", 0);
            r.to_is_contract = true;
            r
        }]);
        let t = g.eoa_idx("t").unwrap();
        for ind in Indicator::ALL {
            let nodes =
                sample_neighborhood(&g, t, &SamplingStrategy::new(ind, 2, 5)).unwrap();
            assert_eq!(nodes, vec![t]);
        }
    }

    #[test]
    fn star_graph_selects_three_highest_amounts() {
        let recs = vec![
            tx("t", "n1", 10),
            tx("t", "n2", 8),
            tx("t", "n3", 6),
            tx("t", "n4", 4),
            tx("t", "n5", 2),
        ];
        let g = build_lw_aig(&recs);
        let t = g.eoa_idx("t").unwrap();
        let got = sample_neighborhood(
            &g,
            t,
            &SamplingStrategy::new(Indicator::Amount, 1, 3),
        )
        .unwrap();
        let mut expected = vec![
            t,
            g.eoa_idx("n1").unwrap(),
            g.eoa_idx("n2").unwrap(),
            g.eoa_idx("n3").unwrap(),
        ];
        expected.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn forced_two_hop_chain() {
        // b's candidates at hop 2 are {a, c}; c outranks a by amount, so the
        // chain is walked to the end. (With equal scores the index tie-break
        // would re-select a, which the union absorbs.)
        let g = build_lw_aig(&[tx("a", "b", 1), tx("b", "c", 2)]);
        let a = g.eoa_idx("a").unwrap();
        let got = sample_neighborhood(
            &g,
            a,
            &SamplingStrategy::new(Indicator::Amount, 2, 1),
        )
        .unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn fanout_larger_than_neighbor_count_returns_all() {
        let g = build_lw_aig(&[tx("t", "a", 1), tx("b", "t", 2)]);
        let t = g.eoa_idx("t").unwrap();
        let got = sample_neighborhood(
            &g,
            t,
            &SamplingStrategy::new(Indicator::Amount, 1, 100),
        )
        .unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn unknown_target_is_an_error() {
        let g = build_lw_aig(&[tx("a", "b", 1)]);
        assert!(matches!(
            sample_neighborhood(&g, 99, &SamplingStrategy::new(Indicator::Amount, 1, 1)),
            Err(SamplerError::UnknownNode(_))
        ));
    }

    fn random_graph(seed: u64, n: usize, edges: usize) -> LwAig {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for _ in 0..edges {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            recs.push(tx(
                &format!("0x{a:03}"),
                &format!("0x{b:03}"),
                rng.random_range(0..1000u128),
            ));
        }
        build_lw_aig(&recs)
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        for seed in 0..10 {
            let g = random_graph(seed, 50, 120);
            for ind in Indicator::ALL {
                for hops in [1, 2] {
                    for fanout in [2, 5] {
                        let strategy = SamplingStrategy::new(ind, hops, fanout);
                        for target in 0..g.eoa_count() as u32 {
                            let fast: BTreeSet<u32> =
                                sample_neighborhood(&g, target, &strategy)
                                    .unwrap()
                                    .into_iter()
                                    .collect();
                            let slow = brute_force_sample(&g, target, &strategy);
                            assert_eq!(fast, slow, "seed {seed} {ind:?} h={hops} K={fanout} t={target}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn induced_subgraph_keeps_only_internal_edges() {
        let g = build_lw_aig(&[tx("a", "b", 1), tx("b", "c", 2)]);
        let a = g.eoa_idx("a").unwrap();
        let b = g.eoa_idx("b").unwrap();
        let sg = induce_subgraph(&g, a, &[a, b], 0).unwrap();
        assert_eq!(sg.edges.len(), 1);
        assert_eq!(sg.global_ids[0], a);
        assert_eq!((sg.edges[0].src, sg.edges[0].dst), (0, 1));
    }

    #[test]
    fn full_node_set_recovers_whole_graph() {
        let g = build_lw_aig(&[tx("a", "b", 1), tx("b", "c", 2), tx("c", "a", 3)]);
        let all: Vec<u32> = (0..g.eoa_count() as u32).collect();
        let sg = induce_subgraph(&g, 0, &all, 0).unwrap();
        assert_eq!(sg.edges.len(), g.edge_count());
        let total: u128 = sg.edges.iter().map(|e| e.amount).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn induced_random_subsets_match_filter_oracle() {
        use rand::Rng;
        let g = random_graph(77, 30, 90);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let target = rng.random_range(0..g.eoa_count() as u32);
            let mut nodes: Vec<u32> = (0..g.eoa_count() as u32)
                .filter(|_| rng.random::<f64>() < 0.4)
                .collect();
            if !nodes.contains(&target) {
                nodes.push(target);
            }
            let sg = induce_subgraph(&g, target, &nodes, 0).unwrap();
            let set: BTreeSet<u32> = nodes.iter().copied().collect();
            let expected: usize = g
                .edges()
                .iter()
                .filter(|e| set.contains(&e.src) && set.contains(&e.dst))
                .count();
            assert_eq!(sg.edges.len(), expected);
            // Every local edge maps back to a real graph edge.
            for e in &sg.edges {
                let gs = sg.global_ids[e.src as usize];
                let gd = sg.global_ids[e.dst as usize];
                let orig = g.edge_between(gs, gd).unwrap();
                assert_eq!((orig.times, orig.amount), (e.times, e.amount));
            }
        }
    }

    fn labeled_graph() -> LwAig {
        let mut recs = Vec::new();
        for i in 0..60 {
            recs.push(tx(&format!("0x{i:02}"), &format!("0x{:02}", (i + 1) % 60), i as u128));
        }
        let mut g = build_lw_aig(&recs);
        let mut labels = Vec::new();
        for i in 0..10 {
            labels.push((format!("0x{i:02}"), "Phish".to_string()));
        }
        for i in 10..60 {
            labels.push((format!("0x{i:02}"), "Common".to_string()));
        }
        g.attach_labels(&labels).unwrap();
        g
    }

    #[test]
    fn binary_dataset_is_balanced_and_seeded() {
        let g = labeled_graph();
        let strategy = SamplingStrategy::new(Indicator::Amount, 1, 3);
        let d1 = build_dataset(&g, &strategy, "Phish", 1.0, 9).unwrap();
        assert_eq!(d1.subgraphs.len(), 20);
        assert_eq!(d1.subgraphs.iter().filter(|s| s.label == 0).count(), 10);
        let d2 = build_dataset(&g, &strategy, "Phish", 1.0, 9).unwrap();
        let ids1: Vec<&str> = d1.subgraphs.iter().map(|s| s.target_id.as_str()).collect();
        let ids2: Vec<&str> = d2.subgraphs.iter().map(|s| s.target_id.as_str()).collect();
        assert_eq!(ids1, ids2);
        let d3 = build_dataset(&g, &strategy, "Phish", 1.0, 10).unwrap();
        let ids3: Vec<&str> = d3.subgraphs.iter().map(|s| s.target_id.as_str()).collect();
        assert_ne!(ids1, ids3, "different seed should select different negatives");
    }

    #[test]
    fn insufficient_negatives_is_an_error() {
        let mut recs = Vec::new();
        for i in 0..14 {
            recs.push(tx(&format!("0x{i:02}"), &format!("0x{:02}", (i + 1) % 14), 1));
        }
        let mut g = build_lw_aig(&recs);
        let mut labels = Vec::new();
        for i in 0..10 {
            labels.push((format!("0x{i:02}"), "Phish".to_string()));
        }
        for i in 10..14 {
            labels.push((format!("0x{i:02}"), "Common".to_string()));
        }
        g.attach_labels(&labels).unwrap();
        let err = build_dataset(
            &g,
            &SamplingStrategy::new(Indicator::Amount, 1, 3),
            "Phish",
            1.0,
            0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SamplerError::InsufficientNegatives {
                needed: 10,
                available: 4
            }
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        /// Node sets grow monotonically in K and h, and respect the size bound.
        #[test]
        fn monotonic_in_fanout_and_hops(seed in 0u64..500) {
            let g = random_graph(seed, 25, 60);
            for ind in Indicator::ALL {
                let base = sample_neighborhood(&g, 0, &SamplingStrategy::new(ind, 1, 2)).unwrap();
                let wider = sample_neighborhood(&g, 0, &SamplingStrategy::new(ind, 1, 3)).unwrap();
                let deeper = sample_neighborhood(&g, 0, &SamplingStrategy::new(ind, 2, 2)).unwrap();
                let base: BTreeSet<u32> = base.into_iter().collect();
                let wider: BTreeSet<u32> = wider.into_iter().collect();
                let deeper: BTreeSet<u32> = deeper.into_iter().collect();
                proptest::prop_assert!(base.is_subset(&wider));
                proptest::prop_assert!(base.is_subset(&deeper));
                proptest::prop_assert!(deeper.len() <= 1 + 2 + 4);
            }
        }
    }
}
