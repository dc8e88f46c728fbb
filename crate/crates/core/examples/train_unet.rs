//! Trains the U-Net baseline on a small synthetic dataset and evaluates it on
//! the held-out patients.
//!
//! `cargo run --release --example train_unet -- [epochs]`

use ramanseg::eval::{evaluate_holdout, InferenceConfig};
use ramanseg::hsdata::{Dataset, PreprocessConfig, Split, SynthConfig};
use ramanseg::models::Variant;
use ramanseg::train::{train_model, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    let data = Dataset::synthetic(20, (128, 128), 7, &SynthConfig::default(), [0.6, 0.2, 0.2], &PreprocessConfig::default())?;

    let mut cfg = TrainConfig::for_variant(Variant::Unet);
    cfg.epochs = epochs;
    cfg.patch_size = 128;
    cfg.model.unet_base_channels = 8;
    let out = train_model(&data, &cfg)?;
    println!(
        "best epoch {} of {}: val Dice {:.4} (untrained {:.4})",
        out.best_epoch,
        out.history.len(),
        out.best_val_dice,
        out.initial_val_dice
    );

    let report = evaluate_holdout(&[out.best], &data.split(Split::Test), &InferenceConfig::default())?;
    print!("{}", report.to_csv());
    Ok(())
}
