//! Binary checkpoint: `OWLNET01`, a length-prefixed JSON header, then named
//! tensors (u32 name length, name, u32 rank, u32 extents, f32 data), all
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::Network;
use super::preprocess::ChannelStats;
use super::{Model, OwlNetError};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"OWLNET01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    channel_stats: ChannelStats,
    epoch: usize,
    #[serde(default)]
    metrics: serde_json::Value,
    tensors: usize,
}

fn corrupt(message: impl Into<String>) -> OwlNetError {
    OwlNetError::Checkpoint(message.into())
}

pub fn write_checkpoint(model: &Model, out: &mut impl Write) -> Result<(), OwlNetError> {
    let tensors = model.network.named_tensors();
    let header = Header {
        config: model.network.config().clone(),
        channel_stats: model.stats,
        epoch: model.epoch,
        metrics: model.metrics.clone(),
        tensors: tensors.len(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| corrupt(e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], OwlNetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, OwlNetError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Model, OwlNetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| corrupt(e.to_string()))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(corrupt("bad magic bytes (not an OWLNET01 checkpoint)"));
    }
    let hlen = cur.u32("header length")?;
    let header: Header =
        serde_json::from_slice(cur.take(hlen, "header")?).map_err(|e| corrupt(format!("header: {e}")))?;
    let mut network: Network<f32> = Network::zeros(&header.config)?;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..header.tensors {
        let nlen = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(nlen, "name")?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")?;
        let shape = (0..rank).map(|_| cur.u32("extent")).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        loaded.insert(name, Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    for (name, slot) in network.named_tensors_mut() {
        let t = loaded
            .remove(&name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(Model {
        network,
        stats: header.channel_stats,
        epoch: header.epoch,
        metrics: header.metrics,
    })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), OwlNetError> {
    let path = path.as_ref();
    let io = |source| OwlNetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    write_checkpoint(model, &mut file)?;
    file.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, OwlNetError> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|source| OwlNetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owlnet::build_network;

    fn model() -> Model {
        Model {
            network: build_network(&NetworkConfig::desk(), 4).unwrap(),
            stats: ChannelStats {
                mean: [0.1, 0.2, 0.3],
                std: [0.4, 0.5, 0.6],
            },
            epoch: 3,
            metrics: serde_json::json!({"f1": 0.5}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corruption_is_reported() {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let short = &buf[..buf.len() - 3];
        let err = read_checkpoint(&mut &short[..]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let mut long = buf;
        long.push(0);
        assert!(read_checkpoint(&mut long.as_slice()).is_err());
    }
}
