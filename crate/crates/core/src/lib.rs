//! Physics-guided unpaired underwater image restoration.
//!
//! Each generator of a cyclic adversarial network decomposes an image into a
//! scene-range map and per-channel attenuation, backscatter and veiling-light
//! coefficients, then applies the underwater image formation model (or its
//! inverse). The crate holds the formation model, the dark-channel mask that
//! anchors the backscatter estimate, the networks and losses, the training
//! loop, and the quality metrics used for evaluation.

pub mod data;
pub mod dcp;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod physics;
pub mod sift;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
pub use imaging::{ImageGray, ImageLab, ImageRgb};
pub use physics::{ChannelTriple, DegradationParams, DepthMap};
