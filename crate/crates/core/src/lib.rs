//! Road user classification from high-frequency GNSS trajectories.
//!
//! The pipeline runs raw fixes through kinematic feature extraction,
//! windowed dataset construction, a configurable LSTM network trained
//! sequence-to-sequence, grid-search tuning and test-set evaluation.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model_store;
pub mod geodesy;
pub mod nn;
pub mod reference;
pub mod seed;
pub mod synthetic;
pub mod training;
pub mod tuning;
pub mod trajectory;

pub use error::{Error, Result};
