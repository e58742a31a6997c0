//! Compact multi-label video classification over pre-extracted frame
//! features: learnable descriptor pooling (NetVLAD, NetRVLAD, Soft-BoF),
//! a non-local attention block over cluster descriptors, stacked GRU
//! encoding, context gating, mixture-of-experts heads, training with Adam
//! and checkpoint weight averaging, a bfloat16 parameter codec, score
//! ensembling, and GAP@k evaluation.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only switches float math from `libm` to the standard library.
//! Every differentiable operation carries a hand-written backward pass;
//! there is no autodiff tape.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bf16;
pub mod checkpoint;
pub mod ensemble;
pub mod gate;
pub mod gradcheck;
pub mod gru;
mod math;
pub mod metrics;
pub mod model;
pub mod nonlocal;
pub mod pooling;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod train;

pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{build_model, model_forward, ModelConfig, ModelFamily, VideoModel};
pub use rng::SeededRng;
pub use store::ParamStore;
pub use tensor::Tensor;
