//! Condition-aware sentence similarity with hypernetwork-generated
//! projections over frozen embeddings.
//!
//! A condition embedding `h_c` is turned into a linear operator `W_c` by a
//! small hypernetwork; sentences are compared as `cos(W_c h_1, W_c h_2)`.
//! The crate covers the numeric kernels, encoders, operator generation,
//! losses with hand-written gradients, training, caching and evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hypernet;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod synthetic;
pub mod trainer;

pub use cache::{Architecture, CacheStats, WorkloadSpec};
pub use data::{CstsQuadruplet, KgTriple};
pub use encoder::{EmbeddingStore, EncoderProvider};
pub use error::{Error, Result};
pub use hypernet::{ConditionOperator, HyperNetParams, Mode};
pub use linalg::{Matrix, Vector};
pub use losses::LossConfig;
pub use trainer::{Model, Task, TrainConfig, TrainReport};
