//! Training objectives, each with a hand-derived gradient with respect to the raw logits.
//!
//! Every loss is the mean over its contributing pixels, so magnitudes do not depend on the
//! raster size. Class-probability maps are `K×H×W` in `f64`, channel-major like the network
//! tensors; label maps are [`TriMask`](crate::dataset::TriMask)s.

mod ce;
pub mod gradcheck;
mod overall;
mod smooth;

pub use ce::{
    cross_entropy, cross_entropy_logits, focusing_ce, focusing_ce_logits, pfce, pfce_logits, pfce_weight,
    softmax_channels, weighted_ce_logits, ClassMap,
};
pub use overall::{overall_loss, overall_loss_maps, LossBreakdown, LossSchedule, PyramidGrad};
pub use smooth::{
    gradient_orientation, smoothness_loss, smoothness_loss_logits, smoothness_loss_maps, soft_argmax,
    Orientation, ARCCOS_CLAMP, GRAD_EPS,
};
