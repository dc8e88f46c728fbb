//! Trains one projection-free RamanSeg per fold over the training and
//! validation patients, then segments the test split with the averaged
//! ensemble probabilities.

use ramanseg::eval::{evaluate_holdout, InferenceConfig};
use ramanseg::hsdata::{Dataset, PreprocessConfig, Split, SynthConfig};
use ramanseg::models::Variant;
use ramanseg::train::{train_kfold, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let data = Dataset::synthetic(20, (64, 64), 3, &SynthConfig::default(), [0.6, 0.2, 0.2], &PreprocessConfig::default())?;
    let mut cfg = TrainConfig::for_variant(Variant::RamansegProjectionFree);
    cfg.folds = 3;
    cfg.epochs = 10;
    cfg.patch_size = 64;
    cfg.learning_rate = 5e-3;
    cfg.model.backbone_channels = 16;
    cfg.model.prototype_depth = 16;
    cfg.model.addon_channels = 16;
    cfg.model.prototypes_per_class = 10;
    cfg.model.downsample_factor = 4;

    let outcomes = train_kfold(&data, &cfg)?;
    for (i, o) in outcomes.iter().enumerate() {
        println!("fold {i}: best val Dice {:.4} at epoch {}", o.best_val_dice, o.best_epoch);
    }
    let members: Vec<_> = outcomes.into_iter().map(|o| o.best).collect();
    let test = data.split(Split::Test);
    let single = evaluate_holdout(&members[..1], &test, &InferenceConfig::default())?;
    let ensemble = evaluate_holdout(&members, &test, &InferenceConfig::default())?;
    println!("test Dice: first fold {:.4}, ensemble {:.4}", single.mean_dice(), ensemble.mean_dice());
    Ok(())
}
