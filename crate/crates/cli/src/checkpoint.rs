//! Checkpoint files: `BKCKPT01`, a little-endian u64 header length, a JSON
//! header, then the tensors back to back in the numcore tensor format. The
//! header lists every tensor with its group, name, byte range and frozen flag.

use std::io::{Read, Write};
use std::path::Path;

use bridgekit::connectors::ConnectorConfig;
use bridgekit::frozen_stubs::{DecoderConfig, ToyDecoder, ToyEncoder};
use bridgekit::{Error, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const MAGIC: &[u8; 8] = b"BKCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub frozen: bool,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named groups of tensors plus free-form metadata.
#[derive(Clone, Debug)]
pub struct Container {
    pub meta: serde_json::Value,
    pub groups: Vec<(String, ParamStore<f64>)>,
}

impl Container {
    pub fn group(&self, name: &str) -> Option<&ParamStore<f64>> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, s)| s)
    }

    fn take_group(&mut self, name: &str) -> bridgekit::Result<ParamStore<f64>> {
        let i = self
            .groups
            .iter()
            .position(|(g, _)| g == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{name}` tensors")))?;
        Ok(self.groups.remove(i).1)
    }

    pub fn to_bytes(&self) -> bridgekit::Result<Vec<u8>> {
        let mut blobs = Vec::new();
        let mut tensors = Vec::new();
        for (group, store) in &self.groups {
            for (_, p) in store.iter() {
                let start = blobs.len() as u64;
                p.tensor.write_to(&mut blobs)?;
                tensors.push(TensorEntry {
                    group: group.clone(),
                    name: p.name.clone(),
                    frozen: p.tensor.is_frozen(),
                    offset: start,
                    bytes: blobs.len() as u64 - start,
                });
            }
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> bridgekit::Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Format("checkpoint header is truncated".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let blobs = &bytes[16 + len..];
        let mut groups: Vec<(String, ParamStore<f64>)> = Vec::new();
        let mut expected = 0u64;
        for t in &header.tensors {
            if t.offset != expected {
                return Err(Error::Format(format!("tensor `{}` is not where the index says", t.name)));
            }
            let end = (t.offset + t.bytes) as usize;
            let mut slice = blobs
                .get(t.offset as usize..end)
                .ok_or_else(|| Error::Format(format!("tensor `{}` is truncated", t.name)))?;
            let mut tensor = Tensor::<f64>::read_from(&mut slice)?;
            if !slice.is_empty() {
                return Err(Error::Format(format!("tensor `{}` has trailing bytes", t.name)));
            }
            if t.frozen {
                tensor.freeze();
            }
            expected = end as u64;
            match groups.iter_mut().find(|(g, _)| *g == t.group) {
                Some((_, s)) => {
                    s.add(t.name.clone(), tensor)?;
                }
                None => {
                    let mut s = ParamStore::new();
                    s.add(t.name.clone(), tensor)?;
                    groups.push((t.group.clone(), s));
                }
            }
        }
        if expected as usize != blobs.len() {
            return Err(Error::Format("checkpoint has unindexed trailing data".into()));
        }
        Ok(Self {
            meta: header.meta,
            groups,
        })
    }

    pub fn save(&self, path: &Path) -> bridgekit::Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> bridgekit::Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Format(format!("cannot open checkpoint {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ExperimentConfig,
    pub connector: ConnectorConfig,
    pub decoder: DecoderConfig,
    pub step: usize,
    /// Validation teacher-forcing accuracy at `step`.
    pub val_accuracy: f64,
}

/// A trained connector with the frozen endpoints it was trained against.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub connector: ParamStore<f64>,
    pub decoder: ParamStore<f64>,
    pub encoder: ParamStore<f64>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, connector: ParamStore<f64>, decoder: &ToyDecoder, encoder: &ToyEncoder) -> Self {
        Self {
            meta,
            connector,
            decoder: decoder.store().clone(),
            encoder: encoder.store().clone(),
        }
    }

    pub fn container(&self) -> bridgekit::Result<Container> {
        Ok(Container {
            meta: serde_json::to_value(&self.meta).map_err(|e| Error::Format(e.to_string()))?,
            groups: vec![
                ("connector".into(), self.connector.clone()),
                ("decoder".into(), self.decoder.clone()),
                ("encoder".into(), self.encoder.clone()),
            ],
        })
    }

    pub fn to_bytes(&self) -> bridgekit::Result<Vec<u8>> {
        self.container()?.to_bytes()
    }

    pub fn from_container(mut c: Container) -> bridgekit::Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let connector = c.take_group("connector")?;
        let decoder = c.take_group("decoder")?;
        let encoder = c.take_group("encoder")?;
        if !decoder.is_frozen() || !encoder.is_frozen() {
            return Err(Error::Format("decoder and encoder tensors must be flagged frozen".into()));
        }
        if meta.connector.d_t != meta.decoder.d_t {
            return Err(Error::Dimension {
                op: "checkpoint d_t",
                left: vec![meta.connector.d_t],
                right: vec![meta.decoder.d_t],
            });
        }
        Ok(Self {
            meta,
            connector,
            decoder,
            encoder,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> bridgekit::Result<Self> {
        Self::from_container(Container::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> bridgekit::Result<()> {
        self.container()?.save(path)
    }

    pub fn load(path: &Path) -> bridgekit::Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    pub fn decoder(&self) -> bridgekit::Result<ToyDecoder> {
        ToyDecoder::from_store(self.meta.decoder.clone(), self.decoder.clone())
    }
}
