//! Binary snapshot of a built [`LwAig`].
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        b"LWAIG1"
//! n_eoa u32, n_ca u32, n_edges u64
//! eoa id table: per id u32 len + bytes
//! ca id table:  per id u32 len + bytes
//! out_offsets:  (n_eoa + 1) x u64
//! edges (CSR order): dst u32, times u64, amount u128
//! node features: nnz u64, then per entry eoa u32, ca u32, count u64
//! labels: u32 count, then per entry eoa u32, u32 len + bytes
//! ```

use super::{Edge, GraphError, LwAig};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"LWAIG1";

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, GraphError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(GraphError::Corrupt(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| GraphError::Corrupt("non-utf8 string".into()))
}

fn write_u128<W: Write>(w: &mut W, v: u128) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u128<R: Read>(r: &mut R) -> std::io::Result<u128> {
    let mut buf = [0u8; 16];
    r.read_exact(&mut buf)?;
    Ok(u128::from_le_bytes(buf))
}

pub(super) fn save(graph: &LwAig, path: &Path) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_u32::<LittleEndian>(graph.eoa_ids.len() as u32)?;
    w.write_u32::<LittleEndian>(graph.ca_ids.len() as u32)?;
    w.write_u64::<LittleEndian>(graph.edges.len() as u64)?;
    for id in &graph.eoa_ids {
        write_str(&mut w, id)?;
    }
    for id in &graph.ca_ids {
        write_str(&mut w, id)?;
    }
    for off in &graph.out_offsets {
        w.write_u64::<LittleEndian>(*off)?;
    }
    for e in &graph.edges {
        w.write_u32::<LittleEndian>(e.dst)?;
        w.write_u64::<LittleEndian>(e.times)?;
        write_u128(&mut w, e.amount)?;
    }
    let nnz: u64 = graph.node_feats.iter().map(|v| v.len() as u64).sum();
    w.write_u64::<LittleEndian>(nnz)?;
    for (eoa, feats) in graph.node_feats.iter().enumerate() {
        for &(ca, count) in feats {
            w.write_u32::<LittleEndian>(eoa as u32)?;
            w.write_u32::<LittleEndian>(ca)?;
            w.write_u64::<LittleEndian>(count)?;
        }
    }
    w.write_u32::<LittleEndian>(graph.labels.len() as u32)?;
    for (&eoa, label) in &graph.labels {
        w.write_u32::<LittleEndian>(eoa)?;
        write_str(&mut w, label)?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn load(path: &Path) -> Result<LwAig, GraphError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(GraphError::BadMagic);
    }
    let n_eoa = r.read_u32::<LittleEndian>()? as usize;
    let n_ca = r.read_u32::<LittleEndian>()? as usize;
    let n_edges = r.read_u64::<LittleEndian>()? as usize;
    let mut eoa_ids = Vec::with_capacity(n_eoa);
    for _ in 0..n_eoa {
        eoa_ids.push(read_str(&mut r)?);
    }
    let mut ca_ids = Vec::with_capacity(n_ca);
    for _ in 0..n_ca {
        ca_ids.push(read_str(&mut r)?);
    }
    let mut out_offsets = vec![0u64; n_eoa + 1];
    for off in out_offsets.iter_mut() {
        *off = r.read_u64::<LittleEndian>()?;
    }
    if out_offsets[n_eoa] as usize != n_edges {
        return Err(GraphError::Corrupt("edge count and offsets disagree".into()));
    }
    let mut edges = Vec::with_capacity(n_edges);
    for src in 0..n_eoa {
        let lo = out_offsets[src] as usize;
        let hi = out_offsets[src + 1] as usize;
        for _ in lo..hi {
            let dst = r.read_u32::<LittleEndian>()?;
            if dst as usize >= n_eoa {
                return Err(GraphError::Corrupt(format!("edge dst {dst} out of range")));
            }
            let times = r.read_u64::<LittleEndian>()?;
            let amount = read_u128(&mut r)?;
            edges.push(Edge {
                src: src as u32,
                dst,
                times,
                amount,
            });
        }
    }
    let nnz = r.read_u64::<LittleEndian>()?;
    let mut node_feats: Vec<Vec<(u32, u64)>> = vec![Vec::new(); n_eoa];
    for _ in 0..nnz {
        let eoa = r.read_u32::<LittleEndian>()? as usize;
        let ca = r.read_u32::<LittleEndian>()?;
        let count = r.read_u64::<LittleEndian>()?;
        if eoa >= n_eoa || ca as usize >= n_ca {
            return Err(GraphError::Corrupt("feature index out of range".into()));
        }
        node_feats[eoa].push((ca, count));
    }
    for feats in node_feats.iter_mut() {
        feats.sort_unstable_by_key(|&(ca, _)| ca);
    }
    let n_labels = r.read_u32::<LittleEndian>()?;
    let mut labels = BTreeMap::new();
    for _ in 0..n_labels {
        let eoa = r.read_u32::<LittleEndian>()?;
        if eoa as usize >= n_eoa {
            return Err(GraphError::Corrupt("label index out of range".into()));
        }
        labels.insert(eoa, read_str(&mut r)?);
    }
    Ok(LwAig::from_parts(eoa_ids, ca_ids, edges, node_feats, labels))
}
