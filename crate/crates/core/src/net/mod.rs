//! Residual encoder-decoder: layers, architecture presets and the executable model.

pub mod arch;
pub mod layers;
pub mod model;
pub mod shuffle;
pub mod tensor;

pub use arch::{ArchitectureSpec, BlockKind, BlockSpec, Preset, TapShape, INPUT_TAP};
pub use layers::{BatchNorm, Conv2d, PRelu, Padding, Param};
pub use model::{build_model, count_parameters, Mode, Model, Residual, Unit};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use tensor::{Real, Tensor};
