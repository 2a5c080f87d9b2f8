//! Sketch-sequence depression screening for person-picking-an-apple drawings.
//!
//! The pipeline decomposes a vector sketch into 12 cumulative sub-sketches,
//! encodes each frame with a small CNN, runs a two-layer LSTM over the frame
//! features, fuses the result with an encoded psychological caption, and
//! classifies the sketch with a three-layer decoder trained under focal loss.

pub mod caption;
pub mod encoders;
pub mod eval;
pub mod model;
pub mod service;
pub mod sketch;
pub mod tensor;
