use std::fs;

use proptest::prelude::*;
use ramanseg::hsdata::io::{read_cube, read_mask, write_cube, write_mask};
use ramanseg::hsdata::{ChannelKind, DatasetManifest, HyperCube, MaskRaster};
use ramanseg::models::{Checkpoint, CheckpointInfo, Model, ModelConfig, Variant};
use ramanseg::substrate::Precision;

fn cube_strategy() -> impl Strategy<Value = HyperCube> {
    (1usize..5, 1usize..9, 1usize..9).prop_flat_map(|(c, h, w)| {
        (
            proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), c * h * w),
            proptest::collection::vec(proptest::option::of(1000.0f64..4000.0), c),
            proptest::collection::vec(0usize..4, c),
        )
            .prop_map(move |(data, wn, kinds)| {
                let kinds = kinds
                    .into_iter()
                    .map(|k| [ChannelKind::Raman, ChannelKind::Transmission, ChannelKind::Tpef, ChannelKind::Shg][k])
                    .collect();
                HyperCube::new(c, h, w, data, wn, kinds).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_write_read_write_is_byte_identical(cube in cube_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.hsc");
        let b = dir.path().join("b.hsc");
        write_cube(&a, &cube).unwrap();
        let back = read_cube(&a).unwrap();
        prop_assert_eq!(&back, &cube);
        write_cube(&b, &back).unwrap();
        prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        prop_assert_eq!(
            fs::read(a.with_extension("meta.json")).unwrap(),
            fs::read(b.with_extension("meta.json")).unwrap()
        );
    }

    #[test]
    fn mask_write_read_write_is_byte_identical(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let labels = (0..h * w).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let mask = MaskRaster::new(h, w, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.msk");
        let b = dir.path().join("b.msk");
        write_mask(&a, &mask).unwrap();
        let back = read_mask(&a).unwrap();
        prop_assert_eq!(&back, &mask);
        write_mask(&b, &back).unwrap();
        prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}

#[test]
fn truncated_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.msk");
    write_mask(&p, &MaskRaster::zeros(4, 4)).unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
    assert!(read_mask(&p).is_err());
    fs::write(&p, b"XXXX").unwrap();
    assert!(read_mask(&p).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let cfg = ModelConfig {
        backbone_channels: 4,
        prototype_depth: 4,
        addon_channels: 4,
        prototypes_per_class: 2,
        ..ModelConfig::for_variant(Variant::RamansegProjectionFree)
    };
    let model = Model::new(&cfg, 5, Precision::F32).unwrap();
    let info = CheckpointInfo {
        seed: 5,
        epoch: 3,
        val_dice: Some(0.5),
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    model.to_checkpoint(info.clone()).unwrap().save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded.info, info);
    Model::from_checkpoint(&loaded, Precision::F32)
        .unwrap()
        .to_checkpoint(info)
        .unwrap()
        .save(&b)
        .unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn manifest_rejects_unknown_fields_and_patient_leaks() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.json");
    fs::write(&p, r#"{"samples": [], "extra": 1}"#).unwrap();
    assert!(DatasetManifest::load(&p).is_err());
    let leak = r#"{"samples": [
        {"sample_id": "a", "patient_id": "P", "cube": "a.hsc", "mask": "a.msk", "split": "train"},
        {"sample_id": "b", "patient_id": "P", "cube": "b.hsc", "mask": "b.msk", "split": "test"}
    ]}"#;
    fs::write(&p, leak).unwrap();
    assert!(DatasetManifest::load(&p).unwrap_err().to_string().contains("patient"));
}
