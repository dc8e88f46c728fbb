//! Channel attributions, Grad-CAM and prototype audits.

mod attribution;
mod audit;
mod gradcam;

pub use attribution::{
    feature_ablation, feature_ablation_with, integrated_gradients, integrated_gradients_with, target_logits,
    ChannelAttribution, IntegratedGradients, PixelTarget,
};
pub use audit::{
    inertia_csv, prototype_class_proportions, prototype_inertia_curve, prototype_vectors, InertiaPoint,
    ProportionAudit, ProportionRow,
};
pub use gradcam::{gradcam, gradcam_map, Heatmap};
