use candle_core::Tensor;

use super::{Mode, Model};
use crate::error::{Error, Result};

/// Arithmetic mean of probability maps of identical shape.
pub fn mean_probabilities(maps: &[Tensor]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Precondition("ensemble needs at least one member".into()))?;
    let mut acc = first.clone();
    for m in &maps[1..] {
        if m.dims() != first.dims() {
            return Err(Error::Shape(format!(
                "ensemble members disagree on output shape: {:?} vs {:?}",
                first.dims(),
                m.dims()
            )));
        }
        acc = (acc + m)?;
    }
    Ok((acc / maps.len() as f64)?)
}

/// Averages the evaluation-mode probabilities of every model on `x`.
pub fn ensemble_predict(models: &[Model], x: &Tensor) -> Result<Tensor> {
    let maps = models
        .iter()
        .map(|m| Ok(m.forward(x, Mode::Eval)?.probabilities))
        .collect::<Result<Vec<_>>>()?;
    mean_probabilities(&maps)
}
