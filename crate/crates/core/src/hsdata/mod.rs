//! Hyperspectral samples: in-memory types, file formats, preprocessing,
//! patching, patient-grouped splitting and synthetic generation.

mod cube;
pub mod io;
pub mod patches;
pub mod preprocess;
pub mod split;
pub mod synth;

use std::path::Path;

pub use cube::{ChannelKind, HyperCube, MaskRaster, Sample};
pub use io::{DatasetManifest, GeneratorRecord, ManifestEntry, Split};
pub use patches::{extract_patches, tile_origins, window_starts};
pub use preprocess::{
    column_drift_correct, kmeans_foreground, percentile_normalize, preprocess_cube, Polarity,
    PreprocessConfig, PreprocessOrder,
};
pub use split::split_by_patient;
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::Result;

/// Preprocessed samples held in memory, each tagged with its split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, splits: Vec<Split>) -> Self {
        assert_eq!(samples.len(), splits.len());
        Self { samples, splits }
    }

    /// Reads every sample listed in the manifest and preprocesses it.
    pub fn load(manifest_path: &Path, preprocess: &PreprocessConfig) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, root, preprocess)
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        root: &Path,
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.samples.len());
        let mut splits = Vec::with_capacity(manifest.samples.len());
        for entry in &manifest.samples {
            let mut s = io::read_sample(root, entry)?;
            s.cube = preprocess_cube(&s.cube, preprocess)?;
            samples.push(s);
            splits.push(entry.split);
        }
        Ok(Self { samples, splits })
    }

    /// Preprocesses in-memory samples.
    pub fn from_samples(
        samples: Vec<Sample>,
        splits: Vec<Split>,
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|mut s| {
                s.cube = preprocess_cube(&s.cube, preprocess)?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(samples, splits))
    }

    /// Synthetic samples split by patient in memory and preprocessed.
    pub fn synthetic(
        n: usize,
        (h, w): (usize, usize),
        seed: u64,
        synth: &SynthConfig,
        ratios: [f64; 3],
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        let samples = generate_synthetic(n, h, w, seed, synth)?;
        let entries = samples
            .iter()
            .map(|s| ManifestEntry {
                sample_id: s.sample_id.clone(),
                patient_id: s.patient_id.clone(),
                cube: String::new(),
                mask: String::new(),
                split: Split::Train,
            })
            .collect();
        let manifest = split_by_patient(entries, ratios, seed)?;
        let splits = manifest.samples.iter().map(|e| e.split).collect();
        Self::from_samples(samples, splits, preprocess)
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn patients(&self, split: Split) -> Vec<String> {
        let mut p: Vec<String> = self.split(split).iter().map(|s| s.patient_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    /// Copy of the dataset with splits reassigned per patient.
    pub fn with_splits(&self, split_of: impl Fn(&Sample) -> Split) -> Self {
        Self {
            samples: self.samples.clone(),
            splits: self.samples.iter().map(split_of).collect(),
        }
    }
}
