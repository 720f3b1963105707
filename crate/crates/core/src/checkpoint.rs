//! Binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"HYPERCL1"                 8-byte magic
//! header_len: u64 LE          byte length of the JSON header
//! header: JSON                {"mode","nh","nk","dropout_p","use_bias","tensors":[{"name","shape","offset"}]}
//! payload: f32 LE ...         tensors in manifest order; offsets are bytes from payload start
//! ```
//!
//! The learnable KGC temperature is stored as a trailing `[1]` tensor
//! named `tau_kgc`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::{HyperNetParams, Mode, Tensor};
use crate::trainer::Model;

pub const MAGIC: &[u8; 8] = b"HYPERCL1";
const TAU_NAME: &str = "tau_kgc";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    mode: Mode,
    nh: usize,
    nk: Option<usize>,
    dropout_p: f64,
    use_bias: bool,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let p = &model.params;
    let mut entries = Vec::new();
    let mut offset = 0;
    for t in p.tensors() {
        entries.push(Entry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len() * 4;
    }
    entries.push(Entry {
        name: TAU_NAME.into(),
        shape: vec![1],
        offset,
    });
    let header = serde_json::to_vec(&Header {
        mode: p.mode(),
        nh: p.nh(),
        nk: p.nk(),
        dropout_p: p.dropout_p(),
        use_bias: p.use_bias(),
        tensors: entries,
    })?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let tau = [model.tau_kgc];
    let all = p.tensors().iter().map(|t| t.data.as_slice()).chain([&tau[..]]);
    for data in all {
        for &x in data {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Checkpoint("missing header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut tensors = Vec::new();
    let mut tau = None;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let bytes = payload
            .get(e.offset..e.offset + n * 4)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past payload", e.name)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        if e.name == TAU_NAME {
            tau = Some(data[0]);
        } else {
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
        }
    }
    let params = HyperNetParams::from_parts(
        header.mode,
        header.nh,
        header.nk,
        header.dropout_p,
        header.use_bias,
        tensors,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Model {
        params,
        tau_kgc: tau.ok_or_else(|| Error::Checkpoint("missing tau_kgc".into()))?,
    })
}
