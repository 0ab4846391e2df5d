//! Binary checkpoint format.
//!
//! Layout: 6-byte magic `FISR1\0`, u32 little-endian JSON header length, the
//! JSON header, then the tensor payloads as raw little-endian f64 in header
//! order. The header records the network config, training counters and every
//! tensor's name and shape; optimizer moments are stored as extra tensors
//! under `adam.m.` / `adam.v.` prefixes so a resumed run continues bitwise
//! identically.

use super::{Network, NetworkConfig, NetworkError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"FISR1\0";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    step: u64,
    epoch: u64,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub step: u64,
    pub epoch: u64,
    pub network: Network,
    pub adam_m: Option<Network>,
    pub adam_v: Option<Network>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let mut metas = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push_tree = |prefix: &str, net: &Network| {
            for (name, t) in net.tensors() {
                metas.push(TensorMeta { name: format!("{prefix}{name}"), shape: t.shape() });
                payload.extend_from_slice(t.as_slice());
            }
        };
        push_tree("", &self.network);
        if let Some(m) = &self.adam_m {
            push_tree("adam.m.", m);
        }
        if let Some(v) = &self.adam_v {
            push_tree("adam.v.", v);
        }

        let header = Header {
            config: self.config,
            step: self.step,
            epoch: self.epoch,
            tensors: metas,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| NetworkError::Checkpoint(e.to_string()))?;

        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MAGIC)?;
        file.write_all(&(header_json.len() as u32).to_le_bytes())?;
        file.write_all(&header_json)?;
        for v in &payload {
            file.write_all(&v.to_le_bytes())?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, NetworkError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 6];
        file.read_exact(&mut magic)
            .map_err(|_| NetworkError::Checkpoint("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(NetworkError::Checkpoint(format!(
                "bad magic {magic:?}, not a checkpoint file"
            )));
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)
            .map_err(|_| NetworkError::Checkpoint("file too short for header length".into()))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json)
            .map_err(|_| NetworkError::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| NetworkError::Checkpoint(format!("header parse: {e}")))?;

        let mut network = Network::init(header.config, 0)?.zeros_like();
        let has_m = header.tensors.iter().any(|t| t.name.starts_with("adam.m."));
        let has_v = header.tensors.iter().any(|t| t.name.starts_with("adam.v."));
        let mut adam_m = has_m.then(|| network.zeros_like());
        let mut adam_v = has_v.then(|| network.zeros_like());

        for meta in &header.tensors {
            let (tree, key): (&mut Network, &str) =
                if let Some(rest) = meta.name.strip_prefix("adam.m.") {
                    (adam_m.as_mut().expect("m tree"), rest)
                } else if let Some(rest) = meta.name.strip_prefix("adam.v.") {
                    (adam_v.as_mut().expect("v tree"), rest)
                } else {
                    (&mut network, &meta.name)
                };
            let mut tensors = tree.tensors_mut();
            let slot = tensors
                .iter_mut()
                .find(|(name, _)| name == key)
                .ok_or_else(|| NetworkError::Checkpoint(format!("unknown tensor {}", meta.name)))?;
            if slot.1.shape() != meta.shape {
                return Err(NetworkError::TensorShape {
                    name: meta.name.clone(),
                    got: meta.shape.clone(),
                    want: slot.1.shape(),
                });
            }
            let dst = slot.1.as_slice_mut();
            let mut buf = vec![0u8; dst.len() * 8];
            file.read_exact(&mut buf).map_err(|_| {
                NetworkError::Checkpoint(format!("truncated payload at tensor {}", meta.name))
            })?;
            for (d, chunk) in dst.iter_mut().zip(buf.chunks_exact(8)) {
                *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }

        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            epoch: header.epoch,
            network,
            adam_m,
            adam_v,
        })
    }
}
