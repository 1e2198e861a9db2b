//! Skip RNN: recurrent cells (LSTM/GRU) augmented with a learned binary
//! state-update gate that can skip whole timesteps, trained end-to-end with
//! a straight-through estimator, plus the benchmark tasks, cost models and
//! optimizer needed to reproduce the reference results.
//!
//! The crate is organized as:
//!
//! - [`tensor`], [`tape`], [`params`], [`rng`]: dense f64 tensors and a
//!   Wengert-tape reverse-mode differentiator over an enumerated op set.
//! - [`cells`]: plain and skip-gated LSTM/GRU stacks, the random-skip
//!   baseline, and a fast inference path that does zero work on skipped
//!   steps.
//! - [`objectives`]: task losses, the update-budget penalty, Adam with
//!   global-norm gradient clipping.
//! - [`tasks`]: seeded generators for the adding and frequency
//!   discrimination benchmarks and an IDX-format MNIST loader.
//! - [`metrics`]: update-count tracking, the per-sequence FLOP cost model,
//!   run aggregation and usage-mask export.
//! - [`checkpoint`]: a versioned binary weight container.

pub mod cells;
pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
