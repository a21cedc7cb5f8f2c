//! Feed-forward classifier with layered parameters, batch and per-sample
//! gradients, and batch normalization.

mod gradcheck;
mod layered;
mod model;

pub use gradcheck::{finite_difference_check, GradCheckReport, RELATIVE_FLOOR};
pub use layered::{layer_norms, LayeredVector};
pub(crate) use model::loss_and_grad_per_sample;
pub use model::{
    accuracy, forward, forward_eval, grad_batch, grad_per_sample, loss, loss_and_grad, Activation,
    Batch, BatchStats, GradOutput, LayerSpec, Matrix, ModelSpec, ParamGroup, RunningStats,
    DEFAULT_BN_EPS,
};
