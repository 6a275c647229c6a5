//! Small dense networks with hand-written reverse-mode gradients, the loss
//! kinds used by the action heads, and the optimizer.

pub mod loss;
pub mod mlp;
pub mod optim;
pub mod params;

pub use loss::{flow_interpolant, loss_and_grad, softmax, LossTarget};
pub use mlp::{mlp_apply, mlp_backward, Mlp, MlpTape};
pub use optim::{cosine, lr_at, optimizer_step, AdamW, TrainConfig};
pub use params::{ParamEntry, ParamId, ParamSet, ShapeRecord};
