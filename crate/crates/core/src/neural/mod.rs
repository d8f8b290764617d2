//! From-scratch network: MLP observation encoder, a cascade of polynomial
//! graph filters over the communication graph, and a shared per-robot action
//! head, trained by cross-entropy against expert labels.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks and protocol parity run in `f64`.

mod checkpoint;
mod gradcheck;
mod model;
mod ops;
mod optim;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use model::{gnn_forward, Activation, Dense, GnnLayer, ModelConfig, ModelParams, Tape};
pub use ops::{
    argmax_rows, cross_entropy, cross_entropy_loss, graph_conv, graph_conv_sparse, graph_shift, shift, shift_transpose,
};
pub use optim::{cosine_lr, optimizer_step, AdamConfig, TrainState};

use ndarray::NdFloat;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type the network runs in.
pub trait Real: NdFloat + Serialize + DeserializeOwned {}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from(v).expect("f64 converts to every Real")
}
