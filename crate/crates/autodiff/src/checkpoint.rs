//! Checkpoint container: a versioned binary file holding an opaque metadata
//! string plus every parameter (value and Adam moments) as named f64 tensors.
//! Values are written as raw little-endian 64-bit floats, so a save/load
//! round trip is bit-exact.

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::{AdError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(store: &ParamStore, meta: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let meta_bytes = meta.as_bytes();
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    w.write_all(meta_bytes)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, param) in store.iter() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        let shape = param.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for t in [&param.value, &param.adam_m, &param.adam_v] {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::Format("bad magic, not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(AdError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta_bytes)?;
    let meta = String::from_utf8(meta_bytes)
        .map_err(|_| AdError::Format("metadata is not valid utf-8".into()))?;

    let count = read_u64(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| AdError::Format("tensor name is not valid utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut tensors = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut data = vec![0.0f64; numel];
            for v in &mut data {
                *v = read_f64(&mut r)?;
            }
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        let adam_v = tensors.pop().unwrap();
        let adam_m = tensors.pop().unwrap();
        let value = tensors.pop().unwrap();
        store.register(&name, value)?;
        let p = store.get_mut(&name)?;
        p.adam_m = adam_m;
        p.adam_v = adam_v;
    }
    Ok((store, meta))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| AdError::Format(format!("truncated checkpoint: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
