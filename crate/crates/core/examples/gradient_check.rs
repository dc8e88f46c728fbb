//! Central-difference verification of the loss gradients in double precision.

use candle_core::{DType, Tensor};
use ramanseg::losses::{activation_overlap, cross_entropy, dice_loss, PairConvention, Targets};
use ramanseg::models::compute_similarity;
use ramanseg::substrate::{device, finite_difference_check};

fn main() -> ramanseg::Result<()> {
    let dev = device();
    let sim = Tensor::rand(0.0f64, 5.0, (2, 4, 3, 3), &dev)?;
    let class_of = [0, 0, 1, 1];
    let e = finite_difference_check(|s| activation_overlap(s, &class_of, 2, PairConvention::Unordered), &sim, 1e-6)?;
    println!("activation overlap   {e:.2e}");

    let labels = vec![0, 1, 1, 0, 1, 0, 0, 1, 1];
    let targets = Targets::new(labels, (1, 3, 3), 2, DType::F64)?;
    let logits = Tensor::randn(0.0f64, 1.0, (1, 2, 3, 3), &dev)?;
    let e = finite_difference_check(|x| cross_entropy(x, &targets), &logits, 1e-6)?;
    println!("cross entropy        {e:.2e}");
    let probs = Tensor::rand(0.05f64, 0.95, (1, 2, 3, 3), &dev)?;
    let e = finite_difference_check(|p| dice_loss(p, &targets.one_hot), &probs, 1e-6)?;
    println!("dice loss            {e:.2e}");

    let z = Tensor::rand(0.0f64, 1.0, (1, 3, 4, 4), &dev)?;
    let protos = Tensor::rand(-0.3f64, 0.3, (5, 3, 3, 3), &dev)?;
    let e = finite_difference_check(|x| Ok(compute_similarity(x, &protos, 1e-4)?.sum_all()?), &z, 1e-6)?;
    println!("similarity (latent)  {e:.2e}");
    Ok(())
}
