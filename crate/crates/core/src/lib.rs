//! Learning compact binary codes with jointly personalized sparse hashing.
//!
//! The pipeline: [`data_io`] loads and centers features, [`anchors`] picks
//! anchor points, [`graphs`] builds the sample-to-anchor affinity and the
//! anchor similarity, [`optimizer`] runs the alternating minimization,
//! [`encoder`] maps new vectors to codes, [`index`] searches codes in Hamming
//! space and [`metrics`] scores the rankings.

pub mod anchors;
pub mod baselines;
pub mod data_io;
pub mod encoder;
pub mod error;
pub mod graphs;
pub mod index;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod optimizer;
pub mod pipeline;
pub mod synthetic;

pub use error::{JpshError, Result};
