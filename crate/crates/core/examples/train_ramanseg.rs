//! Trains RamanSeg with prototype projection: joint training, one projection
//! onto training latents, then a last-layer phase. Prints the phase history
//! and where each prototype came from.
//!
//! `cargo run --release --example train_ramanseg -- [epochs]`

use ramanseg::hsdata::{Dataset, PreprocessConfig, Split, SynthConfig};
use ramanseg::models::Variant;
use ramanseg::prototypes::{prototype_regions, prototype_report, DEFAULT_ACTIVATION_QUANTILE};
use ramanseg::train::{history_csv, train_model, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let data = Dataset::synthetic(20, (128, 128), 7, &SynthConfig::default(), [0.6, 0.2, 0.2], &PreprocessConfig::default())?;

    let mut cfg = TrainConfig::for_variant(Variant::Ramanseg);
    cfg.epochs = epochs;
    cfg.patch_size = 128;
    cfg.learning_rate = 5e-3;
    cfg.model.backbone_channels = 32;
    cfg.model.prototype_depth = 32;
    cfg.model.addon_channels = 32;
    cfg.model.prototypes_per_class = 5;
    cfg.model.downsample_factor = 4;
    let out = train_model(&data, &cfg)?;
    print!("{}", history_csv(&out.history));

    let net = out.best.ramanseg().expect("prototype model");
    let train = data.split(Split::Train);
    let regions = prototype_regions(&out.best, &train, DEFAULT_ACTIVATION_QUANTILE)?;
    for e in prototype_report(net.prototype_meta(), &regions) {
        let origin = e
            .provenance
            .map(|p| format!("{} @ ({}, {})", p.sample_id, p.row, p.col))
            .unwrap_or_else(|| "not projected".into());
        println!("prototype {:>2} class {}: {origin}, region mix {:?}", e.id, e.class_id, e.class_proportions.unwrap_or_default());
    }
    Ok(())
}
