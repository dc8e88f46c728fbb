//! How much segmentation detail survives a low-resolution latent grid:
//! masks are average-pooled, thresholded, upsampled and compared to the original.

use ramanseg::eval::{bottleneck_csv, bottleneck_experiment};
use ramanseg::hsdata::{generate_synthetic, SynthConfig};

fn main() -> ramanseg::Result<()> {
    let samples = generate_synthetic(20, 256, 256, 1, &SynthConfig::default())?;
    let masks: Vec<_> = samples.iter().map(|s| &s.mask).collect();
    let rows = bottleneck_experiment(&masks, &[32, 16, 8, 4])?;
    print!("{}", bottleneck_csv(&rows, (256, 256)));
    Ok(())
}
