//! Modality-routed mixture-of-experts transformer for description-conditioned
//! speech-token generation.
//!
//! A dense text transformer is trained first. Conversion copies every
//! normalization and projection into a frozen text expert and a trainable
//! speech expert; each token is routed by its modality. Training then touches
//! only the speech side, so text behaviour is preserved bit for bit.

pub mod config;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod seqfmt;
pub mod store;
pub mod synthdata;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};
