//! Segmentation metrics, full-image evaluation and the bottleneck experiment.

mod bottleneck;
mod holdout;
mod metrics;

pub use bottleneck::{
    adaptive_average_pool, bottleneck_csv, bottleneck_experiment, bottleneck_reconstruction, BottleneckRow,
};
pub use holdout::{
    argmax_mask, evaluate_holdout, evaluate_samples, predict_mask, predict_probabilities, sample_metrics,
    EvalReport, InferenceConfig, SampleMetrics,
};
pub use metrics::{dice, sensitivity_specificity, ConfusionCounts, MeanStd};
