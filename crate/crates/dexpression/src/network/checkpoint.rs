//! Checkpoint file format: magic `DXPR`, u32 version, a length-prefixed
//! RON-encoded graph/metadata block, named tensor records, trailing CRC32.

use crate::error::{Error, Result};
use crate::network::graph::NetworkGraph;
use crate::network::run::ParamSet;
use crate::tensor::{read_u32, Tensor};
use std::io::Read;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DXPR";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub seed: u64,
    pub class_names: Vec<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Description {
    graph: NetworkGraph,
    meta: CheckpointMeta,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    graph: &NetworkGraph,
    params: &ParamSet<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    params.validate_against(graph)?;
    let desc = Description { graph: graph.clone(), meta: meta.clone() };
    let desc_text = ron::ser::to_string_pretty(&desc, ron::ser::PrettyConfig::default())
        .map_err(|e| Error::CorruptCheckpoint(format!("cannot encode description: {e}")))?;

    let mut body = Vec::new();
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    body.extend_from_slice(&(desc_text.len() as u32).to_le_bytes());
    body.extend_from_slice(desc_text.as_bytes());
    body.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        tensor.write_to(&mut body)?;
    }
    let crc = crc32fast::hash(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, body)?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(NetworkGraph, ParamSet<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::CorruptCheckpoint("CRC mismatch".into()));
    }

    let mut r = body;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CorruptCheckpoint("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, got: version });
    }
    let desc_len = read_u32(&mut r)? as usize;
    if r.len() < desc_len {
        return Err(Error::CorruptCheckpoint("truncated description".into()));
    }
    let (desc_bytes, rest) = r.split_at(desc_len);
    let desc_text = std::str::from_utf8(desc_bytes)
        .map_err(|_| Error::CorruptCheckpoint("description is not UTF-8".into()))?;
    let desc: Description = ron::from_str(desc_text)
        .map_err(|e| Error::CorruptCheckpoint(format!("cannot parse description: {e}")))?;
    desc.graph.validate()?;

    let mut r = rest;
    let count = read_u32(&mut r)? as usize;
    let mut params = ParamSet::empty();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if r.len() < name_len {
            return Err(Error::CorruptCheckpoint("truncated tensor name".into()));
        }
        let (name_bytes, rest) = r.split_at(name_len);
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        r = rest;
        params.insert(name, Tensor::read_from(&mut r)?);
    }
    params.validate_against(&desc.graph)?;
    Ok((desc.graph, params, desc.meta))
}
