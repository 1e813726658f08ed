//! Minimal deterministic neural substrate: dense layers, exact backprop, Adam
//! and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod linalg;
mod mlp;
mod param;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use linalg::{dot, matvec, matvec_t, norm, outer_acc};
pub use mlp::{Activation, Mlp, MlpTrace};
pub use param::{Grads, ParamId, ParamStore, ParamTensor};
