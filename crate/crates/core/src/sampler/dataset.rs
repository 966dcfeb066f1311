//! Subgraph dataset directories.
//!
//! A dataset is one directory holding `meta.json` plus one binary record per
//! subgraph (`000000.sg`, `000001.sg`, ...). Directory names follow the
//! `-A` / `-T` / `-aA` suffix convention of the sampling strategy.

use super::{AccountSubgraph, Indicator, SamplerError, SamplingStrategy};
use crate::graph::Edge;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const SUBGRAPH_MAGIC: &[u8; 5] = b"ACSG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMeta {
    pub indicator: Indicator,
    pub h: usize,
    pub k: usize,
}

impl From<&SamplingStrategy> for StrategyMeta {
    fn from(s: &SamplingStrategy) -> Self {
        StrategyMeta {
            indicator: s.indicator,
            h: s.hops,
            k: s.fanout,
        }
    }
}

impl From<&StrategyMeta> for SamplingStrategy {
    fn from(m: &StrategyMeta) -> Self {
        SamplingStrategy {
            indicator: m.indicator,
            hops: m.h,
            fanout: m.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub strategy: StrategyMeta,
    pub seed: u64,
    pub classes: Vec<String>,
    /// Positive class name for binary positive-versus-rest datasets.
    pub positive: Option<String>,
    pub count: usize,
    pub feature_dim: u32,
}

impl DatasetMeta {
    pub fn new(
        strategy: &SamplingStrategy,
        seed: u64,
        classes: Vec<String>,
        positive: Option<String>,
        feature_dim: u32,
    ) -> Self {
        DatasetMeta {
            strategy: strategy.into(),
            seed,
            classes,
            positive,
            count: 0,
            feature_dim,
        }
    }
}

/// Labeled subgraph collection with its sampling provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub subgraphs: Vec<AccountSubgraph>,
}

impl Dataset {
    pub fn strategy(&self) -> SamplingStrategy {
        (&self.meta.strategy).into()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.subgraphs.iter().map(|s| s.label as usize).collect()
    }
}

fn write_subgraph(path: &Path, sg: &AccountSubgraph) -> Result<(), SamplerError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SUBGRAPH_MAGIC)?;
    w.write_u32::<LittleEndian>(sg.target_id.len() as u32)?;
    w.write_all(sg.target_id.as_bytes())?;
    w.write_u32::<LittleEndian>(sg.label)?;
    w.write_u32::<LittleEndian>(sg.feature_dim)?;
    w.write_u32::<LittleEndian>(sg.global_ids.len() as u32)?;
    for &g in &sg.global_ids {
        w.write_u32::<LittleEndian>(g)?;
    }
    w.write_u32::<LittleEndian>(sg.edges.len() as u32)?;
    for e in &sg.edges {
        w.write_u32::<LittleEndian>(e.src)?;
        w.write_u32::<LittleEndian>(e.dst)?;
        w.write_u64::<LittleEndian>(e.times)?;
        w.write_all(&e.amount.to_le_bytes())?;
    }
    let nnz: u64 = sg.node_feats.iter().map(|f| f.len() as u64).sum();
    w.write_u64::<LittleEndian>(nnz)?;
    for (node, feats) in sg.node_feats.iter().enumerate() {
        for &(ca, count) in feats {
            w.write_u32::<LittleEndian>(node as u32)?;
            w.write_u32::<LittleEndian>(ca)?;
            w.write_u64::<LittleEndian>(count)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_subgraph(path: &Path) -> Result<AccountSubgraph, SamplerError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != SUBGRAPH_MAGIC {
        return Err(SamplerError::Corrupt(format!(
            "{} is not a subgraph record",
            path.display()
        )));
    }
    let id_len = r.read_u32::<LittleEndian>()? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let target_id =
        String::from_utf8(id).map_err(|_| SamplerError::Corrupt("non-utf8 target id".into()))?;
    let label = r.read_u32::<LittleEndian>()?;
    let feature_dim = r.read_u32::<LittleEndian>()?;
    let n_nodes = r.read_u32::<LittleEndian>()? as usize;
    let mut global_ids = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        global_ids.push(r.read_u32::<LittleEndian>()?);
    }
    let n_edges = r.read_u32::<LittleEndian>()? as usize;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let src = r.read_u32::<LittleEndian>()?;
        let dst = r.read_u32::<LittleEndian>()?;
        let times = r.read_u64::<LittleEndian>()?;
        let mut amount = [0u8; 16];
        r.read_exact(&mut amount)?;
        if src as usize >= n_nodes || dst as usize >= n_nodes {
            return Err(SamplerError::Corrupt("edge endpoint out of range".into()));
        }
        edges.push(Edge {
            src,
            dst,
            times,
            amount: u128::from_le_bytes(amount),
        });
    }
    let nnz = r.read_u64::<LittleEndian>()?;
    let mut node_feats: Vec<Vec<(u32, u64)>> = vec![Vec::new(); n_nodes];
    for _ in 0..nnz {
        let node = r.read_u32::<LittleEndian>()? as usize;
        let ca = r.read_u32::<LittleEndian>()?;
        let count = r.read_u64::<LittleEndian>()?;
        if node >= n_nodes || ca >= feature_dim {
            return Err(SamplerError::Corrupt("feature entry out of range".into()));
        }
        node_feats[node].push((ca, count));
    }
    Ok(AccountSubgraph {
        target_id,
        global_ids,
        feature_dim,
        edges,
        node_feats,
        label,
    })
}

/// Writes `meta.json` plus one record per subgraph into `dir` (created if
/// missing, must be empty of previous records).
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<(), SamplerError> {
    std::fs::create_dir_all(dir)?;
    let mut meta = dataset.meta.clone();
    meta.count = dataset.subgraphs.len();
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| SamplerError::Corrupt(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta_json)?;
    for (i, sg) in dataset.subgraphs.iter().enumerate() {
        write_subgraph(&dir.join(format!("{i:06}.sg")), sg)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SamplerError> {
    let meta_raw = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_raw).map_err(|e| SamplerError::Corrupt(e.to_string()))?;
    let mut subgraphs = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        subgraphs.push(read_subgraph(&dir.join(format!("{i:06}.sg")))?);
    }
    Ok(Dataset { meta, subgraphs })
}
