//! Shadow-aware monocular heightmap estimation.
//!
//! A residual encoder-decoder consumes RGB patches plus a binary shadow map
//! and predicts per-pixel object heights. The crate covers raster handling,
//! shadow extraction, patch catalogs, the network with hand-written
//! gradients, training, tiled inference, evaluation, a sliding-mask probe and
//! a procedural scene generator for desk-scale experiments.

pub mod datapipe;
pub mod error;
pub mod grids;
pub mod infer;
pub mod io;
pub mod net;
pub mod probe;
pub mod shadow;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
