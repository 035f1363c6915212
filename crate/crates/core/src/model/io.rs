//! Topology JSON and the `ASCP` little-endian weight container.
//!
//! Container layout: magic `ASCP`, `u32` version, then for each tensor until
//! end of file: `u32` name length, UTF-8 name, `u32` ndim, `u32` dims, and
//! the `f64` payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelError, ModelIR, Topology};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"ASCP";
pub const CONTAINER_VERSION: u32 = 1;

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Format(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decode every tensor in a container, preserving file order.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelError::Format("bad magic, expected ASCP".into()));
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(ModelError::Format(format!("unsupported container version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("ndim")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(ModelError::Format(format!("`{name}`: invalid ndim {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dims")? as usize);
        }
        if shape.contains(&0) {
            return Err(ModelError::Format(format!("`{name}`: zero dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or_else(|| ModelError::Format("payload overflow".into()))?, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), ModelError> {
    fs::write(path, encode_tensors(tensors))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>, ModelError> {
    let mut map = BTreeMap::new();
    for (name, t) in decode_tensors(&fs::read(path)?)? {
        if map.insert(name.clone(), t).is_some() {
            return Err(ModelError::Format(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(map)
}

pub fn save_model(model: &ModelIR, topology_path: &Path, weights_path: &Path) -> Result<(), ModelError> {
    fs::write(topology_path, serde_json::to_string_pretty(&model.topology())? + "\n")?;
    save_tensors(weights_path, model.weights.iter().map(|(k, v)| (k.as_str(), v)))
}

pub fn load_topology(path: &Path) -> Result<Topology, ModelError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Load and validate a model (shapes are checked against the topology).
pub fn load_model(topology_path: &Path, weights_path: &Path) -> Result<ModelIR, ModelError> {
    ModelIR::from_topology(load_topology(topology_path)?, load_tensors(weights_path)?)
}
