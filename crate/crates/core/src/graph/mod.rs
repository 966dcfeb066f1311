//! Account interaction graph construction.
//!
//! Raw records describe two kinds of interaction: EOA-to-EOA transactions and
//! contract calls. [`build_lw_aig`] merges repeated transactions per ordered
//! account pair into a single directed edge carrying `[times, total amount]`,
//! and folds contract calls into per-account call-count feature rows. The
//! resulting [`LwAig`] is immutable and safe for concurrent read-only use.

mod records;
mod snapshot;

pub use records::{ingest_records, write_records_csv, InteractionRecord, RecordFormat, CSV_HEADER};
pub use snapshot::SNAPSHOT_MAGIC;

use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowErrorKind {
    MissingColumn,
    NonNumericValue,
    EmptyAccountId,
}

/// One malformed input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source file (header included for CSV).
    pub row: usize,
    pub kind: RowErrorKind,
    pub detail: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {:?} ({})", self.row, self.kind, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{} malformed row(s), first: {}", errors.len(), errors.first().map(|e| e.to_string()).unwrap_or_default())]
    Ingest { errors: Vec<RowError> },
    #[error("account {account} labeled both {existing:?} and {new:?}")]
    DuplicateConflictingLabel {
        account: String,
        existing: String,
        new: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a graph snapshot")]
    BadMagic,
    #[error("corrupt data: {0}")]
    Corrupt(String),
}

/// Merged directed edge between two EOA nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    /// Number of merged interactions, at least 1.
    pub times: u64,
    /// Total transaction amount in wei-scale integer units.
    pub amount: u128,
}

/// Lightweight account interaction graph: directed, weighted, homogeneous
/// over EOA nodes, with contract-call count node features.
///
/// Amounts stay as unsigned integers so conservation checks are exact;
/// they are converted to floating point only inside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LwAig {
    eoa_ids: Vec<String>,
    ca_ids: Vec<String>,
    eoa_index: HashMap<String, u32>,
    ca_index: HashMap<String, u32>,
    /// Sorted by (src, dst); at most one edge per ordered pair.
    edges: Vec<Edge>,
    /// CSR offsets into `edges` by source node, length eoa_count + 1.
    out_offsets: Vec<u64>,
    /// Edge indices sorted by (dst, src), with CSR offsets by destination.
    in_offsets: Vec<u64>,
    in_edge_ids: Vec<u64>,
    /// Per-EOA sparse call counts, sorted by contract index.
    node_feats: Vec<Vec<(u32, u64)>>,
    /// Identity labels for a subset of EOA nodes.
    labels: BTreeMap<u32, String>,
}

impl LwAig {
    pub fn eoa_count(&self) -> usize {
        self.eoa_ids.len()
    }

    /// Number of contract accounts, which is also the node feature dimension.
    pub fn ca_count(&self) -> usize {
        self.ca_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn eoa_id(&self, idx: u32) -> &str {
        &self.eoa_ids[idx as usize]
    }

    pub fn ca_id(&self, idx: u32) -> &str {
        &self.ca_ids[idx as usize]
    }

    pub fn eoa_idx(&self, id: &str) -> Option<u32> {
        self.eoa_index.get(id).copied()
    }

    /// Outgoing merged edges of a node, ordered by destination.
    pub fn out_edges(&self, v: u32) -> &[Edge] {
        let lo = self.out_offsets[v as usize] as usize;
        let hi = self.out_offsets[v as usize + 1] as usize;
        &self.edges[lo..hi]
    }

    /// Incoming merged edges of a node, as indices into [`LwAig::edges`],
    /// ordered by source.
    pub fn in_edges(&self, v: u32) -> impl Iterator<Item = &Edge> + '_ {
        let lo = self.in_offsets[v as usize] as usize;
        let hi = self.in_offsets[v as usize + 1] as usize;
        self.in_edge_ids[lo..hi]
            .iter()
            .map(move |&e| &self.edges[e as usize])
    }

    /// Feature of the directed edge (src, dst) if present.
    pub fn edge_between(&self, src: u32, dst: u32) -> Option<&Edge> {
        let slice = self.out_edges(src);
        slice
            .binary_search_by_key(&dst, |e| e.dst)
            .ok()
            .map(|i| &slice[i])
    }

    /// Sparse contract-call counts of a node.
    pub fn node_features(&self, v: u32) -> &[(u32, u64)] {
        &self.node_feats[v as usize]
    }

    pub fn labels(&self) -> &BTreeMap<u32, String> {
        &self.labels
    }

    /// Attaches identity labels. Keys that do not resolve to an EOA node are
    /// returned as warnings rather than errors; conflicting re-labeling of
    /// one account is an error.
    pub fn attach_labels(
        &mut self,
        pairs: &[(String, String)],
    ) -> Result<Vec<String>, GraphError> {
        let mut warnings = Vec::new();
        for (account, label) in pairs {
            match self.eoa_index.get(account) {
                Some(&idx) => match self.labels.get(&idx) {
                    Some(existing) if existing != label => {
                        return Err(GraphError::DuplicateConflictingLabel {
                            account: account.clone(),
                            existing: existing.clone(),
                            new: label.clone(),
                        });
                    }
                    _ => {
                        self.labels.insert(idx, label.clone());
                    }
                },
                None => warnings.push(account.clone()),
            }
        }
        Ok(warnings)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GraphError> {
        snapshot::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GraphError> {
        snapshot::load(path)
    }

    fn from_parts(
        eoa_ids: Vec<String>,
        ca_ids: Vec<String>,
        mut edges: Vec<Edge>,
        node_feats: Vec<Vec<(u32, u64)>>,
        labels: BTreeMap<u32, String>,
    ) -> Self {
        edges.sort_unstable_by_key(|e| (e.src, e.dst));
        let n = eoa_ids.len();
        let mut out_offsets = vec![0u64; n + 1];
        for e in &edges {
            out_offsets[e.src as usize + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
        }
        let mut in_order: Vec<u64> = (0..edges.len() as u64).collect();
        in_order.sort_unstable_by_key(|&i| {
            let e = &edges[i as usize];
            (e.dst, e.src)
        });
        let mut in_offsets = vec![0u64; n + 1];
        for &i in &in_order {
            in_offsets[edges[i as usize].dst as usize + 1] += 1;
        }
        for i in 0..n {
            in_offsets[i + 1] += in_offsets[i];
        }
        let eoa_index = eoa_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let ca_index = ca_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        LwAig {
            eoa_ids,
            ca_ids,
            eoa_index,
            ca_index,
            edges,
            out_offsets,
            in_offsets,
            in_edge_ids: in_order,
            node_feats,
            labels,
        }
    }
}

/// Builds the lightweight graph from validated records.
///
/// Account kind is resolved over the whole stream: an address flagged as a
/// contract by any record is a contract account everywhere. Interactions
/// initiated by contract accounts are dropped (nodes are EOAs only); EOA
/// transactions to contract accounts count as calls in the node features.
/// Zero-value transactions still increment the interaction count, and
/// self-transfers become self-edges.
pub fn build_lw_aig(records: &[InteractionRecord]) -> LwAig {
    // First-appearance order with sticky contract flags.
    let mut order: Vec<&str> = Vec::new();
    let mut kind: HashMap<&str, bool> = HashMap::new();
    for r in records {
        for (id, is_ca) in [(r.from.as_str(), r.from_is_contract), (r.to.as_str(), r.to_is_contract)] {
            match kind.get_mut(id) {
                Some(flag) => *flag |= is_ca,
                None => {
                    kind.insert(id, is_ca);
                    order.push(id);
                }
            }
        }
    }
    let mut eoa_ids = Vec::new();
    let mut ca_ids = Vec::new();
    let mut eoa_index: HashMap<&str, u32> = HashMap::new();
    let mut ca_index: HashMap<&str, u32> = HashMap::new();
    for id in order {
        if kind[id] {
            ca_index.insert(id, ca_ids.len() as u32);
            ca_ids.push(id.to_string());
        } else {
            eoa_index.insert(id, eoa_ids.len() as u32);
            eoa_ids.push(id.to_string());
        }
    }

    let mut edge_map: HashMap<(u32, u32), (u64, u128)> = HashMap::new();
    let mut node_feats: Vec<HashMap<u32, u64>> = vec![HashMap::new(); eoa_ids.len()];
    for r in records {
        let Some(&from) = eoa_index.get(r.from.as_str()) else {
            continue; // contract-initiated interaction
        };
        match ca_index.get(r.to.as_str()) {
            Some(&ca) => {
                *node_feats[from as usize].entry(ca).or_insert(0) += 1;
            }
            None => {
                let to = eoa_index[r.to.as_str()];
                let entry = edge_map.entry((from, to)).or_insert((0, 0));
                entry.0 += 1;
                entry.1 += r.value;
            }
        }
    }
    let edges: Vec<Edge> = edge_map
        .into_iter()
        .map(|((src, dst), (times, amount))| Edge {
            src,
            dst,
            times,
            amount,
        })
        .collect();
    let node_feats = node_feats
        .into_iter()
        .map(|m| {
            let mut v: Vec<(u32, u64)> = m.into_iter().collect();
            v.sort_unstable_by_key(|&(ca, _)| ca);
            v
        })
        .collect();
    LwAig::from_parts(eoa_ids, ca_ids, edges, node_feats, BTreeMap::new())
}
