//! Binary parameter checkpoints.
//!
//! Layout: the magic `ENERF1`, then for each entry in name order:
//! `u32` name length, name bytes, `u8` frozen flag, `u32` rank, `u32` per
//! dimension, and the values as little-endian `f32`. Integers are
//! little-endian. The file ends after the last entry.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"ENERF1";

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, entry) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[entry.frozen as u8])?;
        let shape = entry.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(entry.tensor.len() * 4);
        for v in entry.tensor.values() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated entry header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            "ENERF1"
        )));
    }
    let mut store = ParamStore::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(Error::Checkpoint(e.to_string())),
        }
        r.read_exact(&mut len[1..])
            .map_err(|e| Error::Checkpoint(format!("truncated name length: {e}")))?;
        let name_len = u32::from_le_bytes(len) as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let mut frozen = [0u8; 1];
        r.read_exact(&mut frozen)
            .map_err(|e| Error::Checkpoint(format!("truncated flag of `{name}`: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("`{name}` has invalid rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated values of `{name}`: {e}")))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let tensor = Tensor::new(&shape, values)
            .map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        store.insert(name, tensor, frozen[0] != 0)?;
    }
    Ok(store)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<ParamStore<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

/// Loads `path` into `model`, requiring every model entry to be present with the same shape.
pub fn load_into<T: Real>(model: &mut ParamStore<T>, path: &Path) -> Result<ParamStore<T>> {
    let ckpt = load::<T>(path)?;
    for name in model.names() {
        if !ckpt.contains(&name) {
            return Err(Error::Checkpoint(format!("checkpoint lacks `{name}`")));
        }
    }
    let relevant = ParamStore::from_entries(
        ckpt.iter()
            .filter(|(n, _)| model.contains(n))
            .map(|(n, e)| (n.to_string(), e.clone())),
    );
    model.copy_values_from(&relevant)?;
    Ok(ckpt)
}
