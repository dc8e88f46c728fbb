//! Prototype diagnostics: which class each prototype's region actually
//! covers, and the k-means inertia of the learned prototype vectors.

use ramanseg::hsdata::{Dataset, PreprocessConfig, Split, SynthConfig};
use ramanseg::interpret::{inertia_csv, prototype_class_proportions, prototype_inertia_curve, prototype_vectors};
use ramanseg::models::Variant;
use ramanseg::prototypes::DEFAULT_ACTIVATION_QUANTILE;
use ramanseg::train::{train_model, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let data = Dataset::synthetic(12, (64, 64), 8, &SynthConfig::default(), [0.5, 0.25, 0.25], &PreprocessConfig::default())?;
    let mut cfg = TrainConfig::for_variant(Variant::RamansegProjectionFree);
    cfg.epochs = 15;
    cfg.patch_size = 64;
    cfg.learning_rate = 5e-3;
    cfg.model.backbone_channels = 16;
    cfg.model.prototype_depth = 16;
    cfg.model.addon_channels = 16;
    cfg.model.prototypes_per_class = 8;
    cfg.model.downsample_factor = 4;
    let model = train_model(&data, &cfg)?.best;

    let audit = prototype_class_proportions(&model, &data.split(Split::Train), DEFAULT_ACTIVATION_QUANTILE)?;
    print!("{}", audit.to_csv());
    println!("own-class majority per class: {:?}", audit.majority_own_class);
    if !audit.flagged_classes.is_empty() {
        println!("classes whose prototypes mostly cover another class: {:?}", audit.flagged_classes);
    }

    let vectors = prototype_vectors(&model)?;
    print!("{}", inertia_csv(&prototype_inertia_curve(&vectors, 8, cfg.seed)?));
    Ok(())
}
