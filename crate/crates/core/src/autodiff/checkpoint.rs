//! Named-tensor checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"HGATE1"
//! count   u32
//! entry*  name_len u32, name utf-8, rows u32, cols u32, rows*cols f64 (row-major)
//! ```

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"HGATE1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic, not a checkpoint file")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save_named_tensors(
    path: &Path,
    entries: &[(String, &Array2<f64>)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, tensor) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(tensor.nrows() as u32)?;
        w.write_u32::<LittleEndian>(tensor.ncols() as u32)?;
        for v in tensor.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_named_tensors(path: &Path) -> Result<Vec<(String, Array2<f64>)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor name length {name_len} is implausible"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let mut data = vec![0.0f64; rows * cols];
        for v in data.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let tensor = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        out.push((name, tensor));
    }
    Ok(out)
}
