//! Channel attributions for one pixel of a trained model: Integrated
//! Gradients, foreground-region ablation and Grad-CAM.

use ramanseg::hsdata::{Dataset, PreprocessConfig, Split, SynthConfig};
use ramanseg::interpret::{feature_ablation, gradcam, integrated_gradients, PixelTarget};
use ramanseg::models::Variant;
use ramanseg::substrate::{cubes_to_tensor, Precision};
use ramanseg::train::{train_model, TrainConfig};

fn main() -> ramanseg::Result<()> {
    env_logger::init();
    let data = Dataset::synthetic(12, (64, 64), 5, &SynthConfig::default(), [0.5, 0.25, 0.25], &PreprocessConfig::default())?;
    let mut cfg = TrainConfig::for_variant(Variant::RamansegProjectionFree);
    cfg.epochs = 15;
    cfg.patch_size = 64;
    cfg.learning_rate = 5e-3;
    cfg.model.backbone_channels = 16;
    cfg.model.prototype_depth = 16;
    cfg.model.addon_channels = 16;
    cfg.model.prototypes_per_class = 6;
    cfg.model.downsample_factor = 4;
    let model = train_model(&data, &cfg)?.best;

    let sample = data.split(Split::Test)[0];
    let (row, col) = (0..64 * 64)
        .map(|i| (i / 64, i % 64))
        .find(|&(r, c)| sample.mask.get(r, c) == 1)
        .unwrap_or((32, 32));
    let target = PixelTarget { row, col, class: 1 };

    // f64 keeps the path integral accurate
    let exact = model.deep_copy(Precision::F64)?;
    let x = cubes_to_tensor(&[&sample.cube], Precision::F64)?;
    let ig = integrated_gradients(&exact, &x, target, None, 64)?;
    println!("IG at ({row}, {col}): completeness error {:.2e}", ig.completeness_error());
    print!("{}", ig.channels.to_csv());

    let region: Vec<bool> = sample.mask.labels().iter().map(|&l| l == 1).collect();
    let x32 = cubes_to_tensor(&[&sample.cube], Precision::F32)?;
    let ablation = feature_ablation(&model, &x32, &region, target, 0.0)?;
    let top = ablation
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    println!("ablating channel {top} inside the foreground lowers the logit most");

    let cam = gradcam(std::slice::from_ref(&model), &x32, target, None, true)?;
    println!("Grad-CAM on a {}x{} grid, max {:.3}", cam.height, cam.width, cam.values.iter().cloned().fold(0.0, f64::max));
    Ok(())
}
