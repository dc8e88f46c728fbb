//! On-disk formats: `HSC1` cubes with a JSON sidecar, `MSK1` masks, and the
//! JSON dataset manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cube::{ChannelKind, HyperCube, MaskRaster, Sample};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeMeta {
    wavenumbers: Vec<Option<f64>>,
    channel_kinds: Vec<ChannelKind>,
}

/// Sidecar path for a cube file: `dir/name.hsc` -> `dir/name.meta.json`.
pub fn meta_path(cube_path: &Path) -> PathBuf {
    cube_path.with_extension("meta.json")
}

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let (c, h, w) = cube.dims();
    let mut out = Vec::with_capacity(4 + 4 * 4 + cube.data().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Decodes the raster part of a cube file; channel metadata comes from the sidecar.
pub fn decode_cube_raster(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    if bytes.len() < 8 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::format(path, "missing HSC1 magic"));
    }
    let ndims = read_u32(bytes, 4, path)? as usize;
    if ndims != 3 {
        return Err(Error::format(path, format!("expected 3 dims, found {ndims}")));
    }
    let c = read_u32(bytes, 8, path)? as usize;
    let h = read_u32(bytes, 12, path)? as usize;
    let w = read_u32(bytes, 16, path)? as usize;
    let body = &bytes[20..];
    if body.len() != c * h * w * 4 {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {}", body.len(), c * h * w * 4),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((c, h, w, data))
}

pub fn write_cube(path: &Path, cube: &HyperCube) -> Result<()> {
    fs::write(path, encode_cube(cube)).map_err(|e| Error::io(path, e))?;
    let meta = CubeMeta {
        wavenumbers: cube.wavenumbers.clone(),
        channel_kinds: cube.channel_kinds.clone(),
    };
    let meta_file = meta_path(path);
    let json = serde_json::to_vec_pretty(&meta)?;
    fs::write(&meta_file, json).map_err(|e| Error::io(&meta_file, e))
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (c, h, w, data) = decode_cube_raster(&bytes, path)?;
    let meta_file = meta_path(path);
    let meta: CubeMeta = match fs::read(&meta_file) {
        Ok(raw) => serde_json::from_slice(&raw)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CubeMeta {
            wavenumbers: vec![None; c],
            channel_kinds: vec![ChannelKind::Raman; c],
        },
        Err(e) => return Err(Error::io(&meta_file, e)),
    };
    HyperCube::new(c, h, w, data, meta.wavenumbers, meta.channel_kinds)
}

pub fn encode_mask(mask: &MaskRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.labels().len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&(mask.height() as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width() as u32).to_le_bytes());
    out.extend_from_slice(mask.labels());
    out
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<MaskRaster> {
    if bytes.len() < 12 || &bytes[..4] != MASK_MAGIC {
        return Err(Error::format(path, "missing MSK1 magic"));
    }
    let h = read_u32(bytes, 4, path)? as usize;
    let w = read_u32(bytes, 8, path)? as usize;
    let body = &bytes[12..];
    if body.len() != h * w {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {}", body.len(), h * w),
        ));
    }
    MaskRaster::new(h, w, body.to_vec()).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &MaskRaster) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<MaskRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub patient_id: String,
    /// Cube path, relative to the manifest's directory.
    pub cube: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub seed: u64,
    pub config: super::synth::SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub samples: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorRecord>,
}

impl DatasetManifest {
    /// Checks sample-id uniqueness and that no patient spans two splits.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut patient_split: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.samples {
            if !ids.insert(e.sample_id.as_str()) {
                return Err(Error::Precondition(format!(
                    "duplicate sample_id `{}` in manifest",
                    e.sample_id
                )));
            }
            if let Some(prev) = patient_split.insert(&e.patient_id, e.split) {
                if prev != e.split {
                    return Err(Error::Precondition(format!(
                        "patient `{}` appears in both {prev:?} and {:?}",
                        e.patient_id, e.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries(split).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = self.to_json()?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_slice(&raw)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Writes `samples_dir/<id>.hsc`, its sidecar and `samples_dir/<id>.msk`;
/// returns the two paths relative to `root`.
pub fn write_sample(root: &Path, sample: &Sample) -> Result<(String, String)> {
    let dir = root.join("samples");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cube_rel = format!("samples/{}.hsc", sample.sample_id);
    let mask_rel = format!("samples/{}.msk", sample.sample_id);
    write_cube(&root.join(&cube_rel), &sample.cube)?;
    write_mask(&root.join(&mask_rel), &sample.mask)?;
    Ok((cube_rel, mask_rel))
}

pub fn read_sample(root: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let cube = read_cube(&root.join(&entry.cube))?;
    let mask = read_mask(&root.join(&entry.mask))?;
    Sample::new(&entry.sample_id, &entry.patient_id, cube, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_header_layout() {
        let cube = HyperCube::from_raw(2, 1, 3, vec![0.5; 6]).unwrap();
        let bytes = encode_cube(&cube);
        assert_eq!(&bytes[..4], b"HSC1");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 6 * 4);
    }

    #[test]
    fn mask_header_layout() {
        let m = MaskRaster::new(2, 3, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let bytes = encode_mask(&m);
        assert_eq!(&bytes[..4], b"MSK1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..], m.labels());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let p = Path::new("x");
        assert!(decode_cube_raster(b"HSC1\x03\x00\x00\x00", p).is_err());
        assert!(decode_cube_raster(b"NOPE\x03\x00\x00\x00", p).is_err());
        let mut m = encode_mask(&MaskRaster::zeros(2, 2));
        m.pop();
        assert!(decode_mask(&m, p).is_err());
    }

    #[test]
    fn manifest_rejects_patient_leakage() {
        let entry = |id: &str, p: &str, split| ManifestEntry {
            sample_id: id.into(),
            patient_id: p.into(),
            cube: String::new(),
            mask: String::new(),
            split,
        };
        let m = DatasetManifest {
            samples: vec![entry("a", "p1", Split::Train), entry("b", "p1", Split::Test)],
            generator: None,
        };
        assert!(m.validate().is_err());
        let m = DatasetManifest {
            samples: vec![entry("a", "p1", Split::Train), entry("a", "p2", Split::Test)],
            generator: None,
        };
        assert!(m.validate().is_err());
    }
}
