//! Trainable pairwise preference models.
//!
//! Three score heads share one pairwise loss, `-log sigmoid(s / tau)`:
//!
//! - [`BtModel`]: clipped scalar reward, `s = r(y_w) - r(y_l)`.
//! - [`GpmModel`]: skew-symmetric bilinear form over (optionally unit-norm)
//!   embeddings, `s = v_w^T D(x) R D(x) v_l`, where `R` is block-diagonal in
//!   `[[0, 1], [-1, 0]]` blocks and `D(x)` holds non-negative context gates.
//! - [`HrcModel`]: `C1 * bt + C2 * gpm`.
//!
//! A positive score always means the first response is preferred.

mod dataset;
mod dense;
mod heads;
mod train;

pub use dataset::{EmbeddingTable, FeatureSource, PairDataset, PairRecord};
pub use dense::Dense;
pub(crate) use heads::gated_skew_form;
pub use heads::{
    BtModel, GatingHead, GpmModel, HrcModel, ModelKind, ModelSpec, PreferenceModel, ScoreHead,
    DEFAULT_CLIP, DEFAULT_TAU, NORM_EPS,
};
pub use train::{
    accuracy_by_context, eval_accuracy, GroupAccuracy, fit, pair_loss, pair_loss_grad, parameters, set_parameters, FitConfig,
    FitReport, GradientBundle,
};

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1), rearranged to stay accurate for large y.
    y + (-(-y).exp_m1()).ln()
}
