//! Relational self-supervised pretraining.
//!
//! A student network learns to match, over a queue of past teacher
//! embeddings, the sharpened similarity distribution that an EMA teacher
//! produces for a weakly augmented view of the same image.

pub mod augmentation;
pub mod ema;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod loss;
pub mod memory_queue;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
