//! Validation Dice as a function of the number of prototypes per class.

use ramanseg::hsdata::{Dataset, PreprocessConfig, SynthConfig};
use ramanseg::models::Variant;
use ramanseg::train::{grid_sweep, sweep_csv, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let data = Dataset::synthetic(12, (64, 64), 2, &SynthConfig::default(), [0.5, 0.25, 0.25], &PreprocessConfig::default())?;
    let mut cfg = TrainConfig::for_variant(Variant::RamansegProjectionFree);
    cfg.epochs = 8;
    cfg.patch_size = 64;
    cfg.learning_rate = 5e-3;
    cfg.model.backbone_channels = 16;
    cfg.model.prototype_depth = 16;
    cfg.model.addon_channels = 16;
    cfg.model.downsample_factor = 4;
    let values: Vec<String> = [2, 5, 10, 20].iter().map(|v| v.to_string()).collect();
    let rows = grid_sweep(&data, &cfg, "prototypes_per_class", &values)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
