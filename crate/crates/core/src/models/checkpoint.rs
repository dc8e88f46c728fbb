use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::prototypes::PrototypeMeta;
use crate::substrate::ParamBlobs;

const MAGIC: &[u8; 4] = b"RSG1";
const VERSION: u32 = 1;

/// Training context stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub epoch: usize,
    pub val_dice: Option<f64>,
}

/// Serializable snapshot of a model.
///
/// Layout: `"RSG1"`, `u32` version, `u64` header length, JSON header, then the
/// parameter blobs as little-endian `f32` in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub prototypes: Vec<PrototypeMeta>,
    pub info: CheckpointInfo,
    pub params: ParamBlobs,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    prototypes: Vec<PrototypeMeta>,
    info: CheckpointInfo,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .params
            .iter()
            .map(|(name, (shape, values))| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += values.len() * 4;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            prototypes: self.prototypes.clone(),
            info: self.info.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, values) in self.params.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(path, r);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing RSG1 magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..)
            .filter(|b| b.len() >= hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| bad(&format!("header: {e}")))?;
        let blobs = &body[hlen..];
        let mut params = BTreeMap::new();
        let mut expected = 0;
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = blobs
                .get(t.offset..t.offset + 4 * n)
                .ok_or_else(|| bad(&format!("tensor `{}` out of bounds", t.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected = expected.max(t.offset + 4 * n);
            params.insert(t.name, (t.shape, values));
        }
        if expected != blobs.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            prototypes: header.prototypes,
            info: header.info,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Model, Mode, Variant};
    use crate::substrate::{device, to_f64_vec, Precision};

    #[test]
    fn round_trip_preserves_outputs() {
        let cfg = ModelConfig {
            backbone_channels: 4,
            prototype_depth: 4,
            addon_channels: 4,
            prototypes_per_class: 2,
            ..ModelConfig::for_variant(Variant::Ramanseg)
        };
        let m = Model::new(&cfg, 11, Precision::F32).unwrap();
        let ck = m.to_checkpoint(CheckpointInfo { seed: 11, epoch: 3, val_dice: Some(0.5) }).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RSG1");
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        let m2 = Model::from_checkpoint(&back, Precision::F32).unwrap();
        let x = candle_core::Tensor::ones((1, 24, 32, 32), candle_core::DType::F32, &device()).unwrap();
        let a = to_f64_vec(&m.forward(&x, Mode::Eval).unwrap().probabilities).unwrap();
        let b = to_f64_vec(&m2.forward(&x, Mode::Eval).unwrap().probabilities).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("mem");
        assert!(Checkpoint::from_bytes(b"RSG0\0\0\0\0\0\0\0\0\0\0\0\0", p).is_err());
        let cfg = ModelConfig {
            unet_base_channels: 2,
            ..ModelConfig::for_variant(Variant::Unet)
        };
        let ck = Model::new(&cfg, 1, Precision::F32)
            .unwrap()
            .to_checkpoint(CheckpointInfo::default())
            .unwrap();
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes, p).is_err());
    }
}
