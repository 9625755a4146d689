//! A compact sequence-learning training framework: masked sequence tensors,
//! fused LSTM and wavefront-scheduled MDLSTM kernels with hand-derived
//! backward passes, a JSON-driven layer graph, a chunked binary data pipeline,
//! a full optimizer suite, and asynchronous multi-worker training with
//! parameter averaging over a framed wire protocol.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod mdlstm;
pub mod net;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use tensor::{GridTensor, SeqTensor, Tensor};
