use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::io::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};

/// Assigns whole patients to train/val/test so that sample counts
/// approximate `ratios`. The `split` field of the incoming entries is ignored.
pub fn split_by_patient(
    entries: Vec<ManifestEntry>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut per_patient: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &entries {
        *per_patient.entry(e.patient_id.as_str()).or_default() += 1;
    }
    let active: Vec<usize> = (0..3).filter(|&s| ratios[s] > 0.0).collect();
    if per_patient.len() < active.len() {
        return Err(Error::Precondition(format!(
            "{} patients cannot populate {} splits",
            per_patient.len(),
            active.len()
        )));
    }

    let mut patients: Vec<(&str, usize)> = per_patient.into_iter().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = entries.len() as f64;
    let mut assigned = [0usize; 3];
    let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
    for (i, &(patient, n)) in patients.iter().enumerate() {
        // Seed each active split with one patient, then fill by largest deficit.
        let s = if i < active.len() {
            active[i]
        } else {
            *active
                .iter()
                .max_by(|&&a, &&b| {
                    let da = ratios[a] * total - assigned[a] as f64;
                    let db = ratios[b] * total - assigned[b] as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap()
        };
        assigned[s] += n;
        split_of.insert(patient, Split::ALL[s]);
    }

    let samples = entries
        .iter()
        .map(|e| ManifestEntry {
            split: split_of[e.patient_id.as_str()],
            ..e.clone()
        })
        .collect();
    let manifest = DatasetManifest {
        samples,
        generator: None,
    };
    manifest.validate()?;
    Ok(manifest)
}
