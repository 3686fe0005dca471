//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "DICGCKPT"
//! version  u32      currently 1
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), rows u64, cols u64, rows*cols f64
//! ```

use std::io::{Read, Write};

use super::{AutodiffError, ParameterStore, Tensor};

pub const MAGIC: &[u8; 8] = b"DICGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub value: Tensor,
}

/// Parameters in registration order.
pub fn entries(store: &ParameterStore) -> Vec<CheckpointEntry> {
    store
        .iter()
        .map(|(name, value)| CheckpointEntry {
            name: name.to_string(),
            value: value.clone(),
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParameterStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.rows() as u64).to_le_bytes())?;
        w.write_all(&(value.cols() as u64).to_le_bytes())?;
        for v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(AutodiffError::io)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, AutodiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(AutodiffError::io)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>, AutodiffError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(AutodiffError::io)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(AutodiffError::io)?;
        let name =
            String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("{name}: shape overflow")))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(AutodiffError::io)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(CheckpointEntry {
            name,
            value: Tensor::new(rows, cols, data)?,
        });
    }
    Ok(out)
}

/// Copies checkpoint values into an existing store. Every store parameter
/// must be present with a matching shape; extra entries are rejected too.
pub fn load_into(store: &mut ParameterStore, entries: Vec<CheckpointEntry>) -> Result<(), AutodiffError> {
    if entries.len() != store.len() {
        let missing: Vec<_> = store
            .iter()
            .map(|(n, _)| n)
            .filter(|n| !entries.iter().any(|e| e.name == *n))
            .map(str::to_string)
            .collect();
        return Err(AutodiffError::Checkpoint(format!(
            "checkpoint has {} entries, model expects {} (missing: {})",
            entries.len(),
            store.len(),
            missing.join(", ")
        )));
    }
    for e in entries {
        store.set_by_name(&e.name, e.value)?;
    }
    Ok(())
}
