//! Writes a small synthetic dataset with a patient-grouped manifest.
//!
//! `cargo run --example generate_dataset -- [out_dir]`

use std::path::PathBuf;

use ramanseg::hsdata::io::write_sample;
use ramanseg::hsdata::{generate_synthetic, split_by_patient, GeneratorRecord, ManifestEntry, Split, SynthConfig};

fn main() -> ramanseg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ramanseg_demo"));
    let synth = SynthConfig {
        overlap: 0.4,
        ..SynthConfig::default()
    };
    let samples = generate_synthetic(8, 128, 128, 42, &synth)?;
    let mut entries = Vec::new();
    for s in &samples {
        let (cube, mask) = write_sample(&out, s)?;
        entries.push(ManifestEntry {
            sample_id: s.sample_id.clone(),
            patient_id: s.patient_id.clone(),
            cube,
            mask,
            split: Split::Train,
        });
    }
    let mut manifest = split_by_patient(entries, [0.5, 0.25, 0.25], 42)?;
    manifest.generator = Some(GeneratorRecord { seed: 42, config: synth });
    manifest.save(&out.join("manifest.json"))?;

    for split in Split::ALL {
        println!("{split:?}: {} samples", manifest.count(split));
    }
    let s = &samples[0];
    let fg = s.mask.foreground_count() as f64 / (s.mask.height() * s.mask.width()) as f64;
    println!(
        "{}: {} channels, {:.1}% foreground; written to {}",
        s.sample_id,
        s.cube.channels(),
        100.0 * fg,
        out.display()
    );
    Ok(())
}
