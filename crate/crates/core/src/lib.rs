//! Deep clustering with positive-instance proximity (PIP) and a cluster
//! dispersion regularizer (CDR).
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense matrices, hypersphere geometry, seeded RNG.
//! * [`networks`]: fully-connected encoder / predictor / EMA target stack
//!   with hand-written backward passes.
//! * [`losses`]: InfoNCE family, BYOL alignment, PIP, PSA and the CDR
//!   surrogate, each returning a value and an analytic gradient.
//! * [`clustering`]: spherical k-means, batch assignment, memory queue.
//! * [`metrics`]: NMI, AMI, ARI, Hungarian accuracy, imbalance ratio,
//!   STD uniformity, neighbor preservation rate.
//! * [`data`]: synthetic generators, vector augmentations, long-tail
//!   subsampling, CSV loading.
//! * [`trainer`]: the alternating k-means / gradient-descent loop.

pub mod clustering;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod numerics;
pub mod trainer;

pub use clustering::{KMeansParams, MemoryQueue, PseudoLabeling};
pub use data::{AugmentSpec, Dataset};
pub use error::{Error, Result};
pub use losses::{LossOut, ViewPair};
pub use metrics::{MetricsReport, Partition};
pub use networks::{Encoder, GradientTape, Mlp, MlpSpec, NetworkStack};
pub use numerics::{Matrix, Rng};
pub use trainer::{TrainConfig, TrainState, Trainer};
