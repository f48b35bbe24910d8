//! Checkpoint container: a JSON manifest followed by raw little-endian
//! float64 payloads, one per named tensor, in sorted name order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::optim::ParamSet;
use crate::numerics::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TDMC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    manifest: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    manifest: &serde_json::Value,
    params: &ParamSet,
) -> Result<()> {
    let path = path.as_ref();
    let entries: Vec<TensorEntry> = params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = Header {
        manifest: manifest.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::config(format!("checkpoint manifest serialization: {e}")))?;

    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    for (_, t) in params.iter() {
        for x in t.data() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(serde_json::Value, ParamSet)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path.display().to_string(), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::validation(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(io)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::validation(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8).map_err(io)?;
    let hlen = u64::from_le_bytes(l8) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes).map_err(io)?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(|e| {
        Error::validation(format!("{}: corrupt checkpoint header: {e}", path.display()))
    })?;

    let mut params = ParamSet::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for x in data.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *x = f64::from_le_bytes(buf);
        }
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((header.manifest, params))
}
